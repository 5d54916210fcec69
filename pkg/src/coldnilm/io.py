"""On-disk formats: canonical signature files and synthetic dataset records.

Signatures are stored as little-endian float32 interleaved ``(current,
voltage)`` pairs in ``<id>.f32`` with a JSON sidecar ``<id>.json`` holding
``{label, rate, source_id}``. Other layouts plug in through
:func:`register_reader`.

A synthetic dataset directory holds ``samples.f32`` (one fixed-length
float32 record per example, in manifest order), ``manifest.jsonl`` (one JSON
record per example) and ``dataset.json`` (header and per-w counts).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .signal import Signature, Waveform

SIGNATURE_SUFFIX = ".f32"
_F32 = np.dtype("<f4")


class DataError(Exception):
    """Malformed or inconsistent artifact on disk."""


def _safe_name(source_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in source_id)


def write_signature(sig: Signature, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = _safe_name(sig.source_id or sig.label)
    pairs = np.empty((len(sig), 2), dtype=_F32)
    pairs[:, 0] = sig.current.samples
    pairs[:, 1] = sig.voltage.samples
    path = directory / (stem + SIGNATURE_SUFFIX)
    path.write_bytes(pairs.tobytes())
    meta = {"label": sig.label, "rate": sig.rate, "source_id": sig.source_id}
    (directory / (stem + ".json")).write_text(json.dumps(meta, sort_keys=True) + "\n")
    return path


def read_canonical(path) -> Signature:
    path = Path(path)
    meta_path = path.with_suffix(".json")
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"missing metadata sidecar {meta_path}") from exc
    raw = path.read_bytes()
    if len(raw) % (2 * _F32.itemsize):
        raise DataError(f"{path}: size is not a whole number of (current, voltage) pairs")
    pairs = np.frombuffer(raw, dtype=_F32).reshape(-1, 2).astype(np.float64)
    rate = float(meta["rate"])
    return Signature(meta["label"], Waveform(pairs[:, 0], rate), Waveform(pairs[:, 1], rate),
                     meta.get("source_id", path.stem))


_READERS: dict[str, Callable[[Path], Signature]] = {SIGNATURE_SUFFIX: read_canonical}


def register_reader(suffix: str, reader: Callable[[Path], Signature]) -> None:
    """Make :func:`read_signature_dir` load files ending in ``suffix`` with ``reader``."""
    _READERS[suffix] = reader


def read_signature(path) -> Signature:
    path = Path(path)
    try:
        reader = _READERS[path.suffix]
    except KeyError as exc:
        raise DataError(f"no reader registered for {path.suffix!r}") from exc
    return reader(path)


def iter_signature_dir(directory) -> Iterator[Signature]:
    directory = Path(directory)
    for path in sorted(directory.iterdir()):
        if path.suffix in _READERS:
            yield read_signature(path)


def read_pattern_dir(directory) -> dict[str, list[Signature]]:
    """Group the signatures of a directory by label (file order within a label)."""
    patterns: dict[str, list[Signature]] = {}
    for sig in iter_signature_dir(directory):
        patterns.setdefault(sig.label, []).append(sig)
    return patterns


# -- datasets -----------------------------------------------------------------

def write_dataset(directory, header: dict, examples: Iterable) -> dict:
    """Stream ``examples`` (AggregateExample) to ``directory``; returns the header written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n_samples = int(header["n_samples"])
    counts: dict[str, int] = {}
    n = 0
    with open(directory / "samples.f32", "wb") as fs, open(directory / "manifest.jsonl", "w") as fm:
        for ex in examples:
            if ex.current.shape[0] != n_samples:
                raise DataError(f"example {ex.id} has {ex.current.shape[0]} samples, expected {n_samples}")
            fs.write(ex.current.astype(_F32).tobytes())
            fm.write(json.dumps(ex.manifest_record(), sort_keys=True) + "\n")
            counts[str(ex.w)] = counts.get(str(ex.w), 0) + 1
            n += 1
    header = dict(header, n_examples=n, counts=counts)
    (directory / "dataset.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return header


def read_dataset_header(directory) -> dict:
    path = Path(directory) / "dataset.json"
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"{directory} is not a dataset directory") from exc


def read_manifest(directory) -> list[dict]:
    with open(Path(directory) / "manifest.jsonl") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_samples(directory, header: dict | None = None) -> np.ndarray:
    """Memory-map the example currents as an (n_examples, n_samples) float32 array."""
    header = header or read_dataset_header(directory)
    n, m = int(header["n_examples"]), int(header["n_samples"])
    path = Path(directory) / "samples.f32"
    if path.stat().st_size != n * m * _F32.itemsize:
        raise DataError(f"{path} size does not match header ({n} x {m})")
    if n == 0:
        return np.zeros((0, m), dtype=_F32)
    return np.memmap(path, dtype=_F32, mode="r", shape=(n, m))


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"missing file {path}") from exc
