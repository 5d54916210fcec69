"""Short-time Fourier features of aggregate windows.

With the default configuration (0.1 s window, 0.02 s hop, centered reflect
padding) a 5 s window at 4 kHz becomes a 251 x 201 matrix: one row per hop,
one column per frequency bin.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EPS_STD = 1e-6
_MAGIC = b"COLDFEAT"


class TooShort(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class WindowFn(str, enum.Enum):
    HANN = "hann"
    RECT = "rect"


class Padding(str, enum.Enum):
    CENTER = "center"
    NONE = "none"


class Scale(str, enum.Enum):
    LOG = "log"
    MAGNITUDE = "magnitude"


@dataclass(frozen=True)
class StftConfig:
    window_len: float = 0.1
    hop: float = 0.02
    window_fn: WindowFn = WindowFn.HANN
    padding: Padding = Padding.CENTER
    scale: Scale = Scale.LOG

    def __post_init__(self):
        object.__setattr__(self, "window_fn", WindowFn(self.window_fn))
        object.__setattr__(self, "padding", Padding(self.padding))
        object.__setattr__(self, "scale", Scale(self.scale))
        if not 0 < self.hop <= self.window_len:
            raise ValueError("need 0 < hop <= window_len")

    def samples(self, rate: float) -> tuple[int, int]:
        """(window, hop) in samples; both must be integral at ``rate``."""
        n_win, n_hop = self.window_len * rate, self.hop * rate
        if abs(n_win - round(n_win)) > 1e-6 or abs(n_hop - round(n_hop)) > 1e-6:
            raise ValueError(f"window/hop not integral at {rate} Hz")
        return int(round(n_win)), int(round(n_hop))

    def shape(self, n_samples: int, rate: float) -> tuple[int, int]:
        n_win, n_hop = self.samples(rate)
        if self.padding is Padding.CENTER:
            t = n_samples // n_hop + 1
        else:
            t = (n_samples - n_win) // n_hop + 1
        return t, n_win // 2 + 1

    def to_dict(self) -> dict:
        return {"window_len": self.window_len, "hop": self.hop, "window_fn": self.window_fn.value,
                "padding": self.padding.value, "scale": self.scale.value}


def window(fn: WindowFn, n: int) -> np.ndarray:
    if fn is WindowFn.RECT:
        return np.ones(n)
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)  # periodic Hann


def stft(x: np.ndarray, rate: float, cfg: StftConfig) -> np.ndarray:
    """Complex STFT frames, shape (t, window/2 + 1)."""
    x = np.asarray(x, dtype=np.float64)
    n_win, n_hop = cfg.samples(rate)
    if cfg.padding is Padding.CENTER:
        if x.shape[0] <= n_win // 2:
            raise TooShort(f"{x.shape[0]} samples cannot be reflect-padded by {n_win // 2}")
        x = np.pad(x, n_win // 2, mode="reflect")
    elif x.shape[0] < n_win:
        raise TooShort(f"{x.shape[0]} samples shorter than the {n_win}-sample window")
    frames = sliding_window_view(x, n_win)[::n_hop]
    return np.fft.rfft(frames * window(cfg.window_fn, n_win), axis=-1)


def spectrogram(current: np.ndarray, rate: float, cfg: StftConfig) -> np.ndarray:
    mag = np.abs(stft(current, rate, cfg))
    if cfg.scale is Scale.LOG:
        return np.log1p(mag)
    return mag


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray
    count: int
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "count": self.count,
                "config_hash": self.config_hash}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   int(d["count"]), d.get("config_hash", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_normalization(specs: Iterable[np.ndarray], eps: float = EPS_STD, config_hash: str = "") -> FeatureStats:
    """Per-frequency-bin mean and population std over every frame of every example.

    Single pass; per-example moments are merged with the pairwise update of
    Chan et al., so long datasets stream without holding all frames.
    """
    n = 0
    mean = m2 = None
    n_examples = 0
    for s in specs:
        s = np.asarray(s, dtype=np.float64)
        k = s.shape[0]
        b_mean = s.mean(axis=0)
        b_m2 = ((s - b_mean) ** 2).sum(axis=0)
        if mean is None:
            n, mean, m2 = k, b_mean, b_m2
        else:
            if b_mean.shape != mean.shape:
                raise ShapeMismatch(f"bin count {b_mean.shape[0]} != {mean.shape[0]}")
            delta = b_mean - mean
            total = n + k
            mean = mean + delta * (k / total)
            m2 = m2 + b_m2 + delta ** 2 * (n * k / total)
            n = total
        n_examples += 1
    if n_examples < 2:
        raise ValueError("normalization statistics need at least two examples")
    std = np.maximum(np.sqrt(m2 / n), eps)
    return FeatureStats(mean, std, n_examples, config_hash)


def normalize_spectrogram(spec: np.ndarray, stats: FeatureStats) -> np.ndarray:
    if spec.shape[-1] != stats.mean.shape[0]:
        raise ShapeMismatch(f"spectrogram has {spec.shape[-1]} bins, stats have {stats.mean.shape[0]}")
    return (spec - stats.mean) / stats.std


# -- feature cache ------------------------------------------------------------

def write_feature_cache(path, features: np.ndarray, targets: np.ndarray, ws: np.ndarray, header: dict) -> None:
    """Header-prefixed float32 (n, t, v) block followed by uint8 targets and int32 w."""
    features = np.ascontiguousarray(features, dtype="<f4")
    n, t, v = features.shape
    header = dict(header, n=n, t=t, v=v, n_labels=int(targets.shape[1]))
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", len(blob)) + blob)
        fh.write(features.tobytes())
        fh.write(np.ascontiguousarray(targets, dtype=np.uint8).tobytes())
        fh.write(np.ascontiguousarray(ws, dtype="<i4").tobytes())


def read_feature_cache(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a feature cache")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen])
    n, t, v, n_labels = header["n"], header["t"], header["v"], header["n_labels"]
    off = 12 + hlen
    x = np.frombuffer(raw, dtype="<f4", count=n * t * v, offset=off).reshape(n, t, v)
    off += 4 * n * t * v
    y = np.frombuffer(raw, dtype=np.uint8, count=n * n_labels, offset=off).reshape(n, n_labels)
    off += n * n_labels
    ws = np.frombuffer(raw, dtype="<i4", count=n, offset=off)
    return x, y, ws, header
