"""Pipeline stages behind the command-line interface.

Each stage reads the artifacts of the previous one under a single output
directory, checks their configuration hash and writes its own artifacts
together with a ``meta.json`` recording the hash it was produced under.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import asha as A
from . import features as F
from . import io
from . import model as M
from . import sns
from . import train as T
from .config import PipelineConfig, derive_seed
from .signal import BandEmpty, SignatureRejected, ZeroVoltage, normalize_signature
from .toy import generate_signatures

log = logging.getLogger(__name__)

META = "meta.json"
CHECKPOINT = "checkpoint.ckpt"


class DataError(io.DataError):
    pass


def _write_meta(directory: Path, stage: str, config_hash: str, **extra) -> None:
    io.write_json(directory / META, dict(extra, stage=stage, config_hash=config_hash))


def _check_hash(found: str | None, expected: str, what) -> None:
    if found != expected:
        raise DataError(f"{what} was built under config hash {found}, current config expects {expected}; "
                        "rerun the upstream stage")


def _check_meta(directory: Path, expected: str, required: bool = True) -> dict:
    path = directory / META
    if not path.exists():
        if required:
            raise DataError(f"{directory} has no {META}; run the upstream stage first")
        return {}
    meta = io.read_json(path)
    _check_hash(meta.get("config_hash"), expected, directory)
    return meta


# -- gen-toy ------------------------------------------------------------------

def gen_toy(cfg: PipelineConfig, out: Path, n_per_label: int | None = None) -> dict:
    toy = cfg.section("toy")
    n = int(n_per_label if n_per_label is not None else toy.get("n_per_label", 20))
    rate = float(toy.get("rate", 8000))
    specs = cfg.toy_specs()
    raw_dir = cfg.path("raw", out)
    raw_dir.mkdir(parents=True, exist_ok=True)
    counts = {}
    for spec in specs:
        sigs = generate_signatures(spec, n, rate, derive_seed(cfg.seed, "toy"))
        for s in sigs:
            io.write_signature(s, raw_dir)
        counts[spec.label] = len(sigs)
    io.write_json(raw_dir / "specs.json", [s.to_dict() for s in specs])
    if n_per_label is not None:
        cfg.raw["toy"]["n_per_label"] = n
    _write_meta(raw_dir, "gen-toy", cfg.stage_hash("gen-toy"), counts=counts, rate=rate)
    return counts


# -- normalize ----------------------------------------------------------------

def _normalize_one(args):
    sig, ncfg = args
    try:
        return normalize_signature(sig, ncfg), None
    except SignatureRejected as exc:
        return None, {"code": exc.code.value, "step": exc.step, "detail": exc.detail}
    except (BandEmpty, ZeroVoltage) as exc:
        return None, {"code": type(exc).__name__, "step": 1, "detail": str(exc)}


def normalize(cfg: PipelineConfig, out: Path) -> dict:
    """Normalize every raw signature; returns the rejection summary."""
    raw_dir = cfg.path("raw", out)
    if not raw_dir.is_dir():
        raise DataError(f"raw signature directory {raw_dir} does not exist")
    raw_meta = raw_dir / META
    source_hash = io.read_json(raw_meta).get("config_hash") if raw_meta.exists() else None
    ncfg = cfg.normalization()
    base_dir = cfg.path("baseline", out)
    base_dir.mkdir(parents=True, exist_ok=True)
    for old in base_dir.glob("*" + io.SIGNATURE_SUFFIX):
        old.unlink()
        old.with_suffix(".json").unlink(missing_ok=True)
    sigs = list(io.iter_signature_dir(raw_dir))
    with ThreadPoolExecutor(max(1, cfg.threads)) as pool:
        results = list(pool.map(_normalize_one, [(s, ncfg) for s in sigs]))
    rejections = []
    kept: dict[str, int] = {}
    for sig, (norm, rej) in zip(sigs, results):
        if rej is None:
            io.write_signature(norm, base_dir)
            kept[sig.label] = kept.get(sig.label, 0) + 1
        else:
            rejections.append(dict(rej, source_id=sig.source_id, label=sig.label))
    summary = {code: 0 for code in ("HighTHD", "NoActivity", "TooShort")}
    for r in rejections:
        summary[r["code"]] = summary.get(r["code"], 0) + 1
    with open(base_dir / "rejections.jsonl", "w") as fh:
        for r in rejections:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    _write_meta(base_dir, "normalize", cfg.stage_hash("normalize"), source_hash=source_hash, n_input=len(sigs),
                n_kept=len(sigs) - len(rejections), kept_per_label=kept, rejections=summary)
    return {"n_input": len(sigs), "n_kept": len(sigs) - len(rejections), "rejections": summary}


def rejection_text(summary: dict) -> str:
    lines = [f"{summary['n_input']} signatures read, {summary['n_kept']} kept", "reason        dropped"]
    lines += [f"{code:<13} {n}" for code, n in sorted(summary["rejections"].items())]
    return "\n".join(lines) + "\n"


# -- synthesize ---------------------------------------------------------------

def load_baseline(cfg: PipelineConfig, out: Path) -> dict[str, list]:
    base_dir = cfg.path("baseline", out)
    _check_meta(base_dir, cfg.stage_hash("normalize"))
    patterns = io.read_pattern_dir(base_dir)
    if not patterns:
        raise DataError(f"no normalized signatures in {base_dir}")
    return patterns


def synthesize(cfg: PipelineConfig, out: Path, split: str) -> list[dict]:
    """Build one split's dataset; returns the per-w summary rows."""
    patterns = load_baseline(cfg, out)
    labels = sorted(patterns)
    parts = sns.split_baseline(patterns, cfg.fractions(), derive_seed(cfg.seed, "split"))
    f_down = cfg.normalization().f_down
    schedule = cfg.schedule(split)
    col = sns.synthesize_collection(parts[split], schedule, labels, f_down,
                                    cfg.normalization().f_ref, cfg.threads)
    for t in col.truncations():
        log.warning("truncated: w=%d combination %d %s built %d of %d", t["w"], t["combination"],
                    t["labels"], t["built"], t["requested"])
    ds_dir = cfg.path("datasets", out) / split
    header = {"split": split, "labels": labels, "rate": f_down, "t_obs": schedule.t_obs,
              "n_samples": col.window_len, "config_hash": cfg.stage_hash("synthesize"),
              "schedule": col.summary(), "truncations": col.truncations()}
    io.write_dataset(ds_dir, header, col)
    return col.summary()


def schedule_text(rows: list[dict]) -> str:
    lines = [f"{'w':>3} {'b_comb':>7} {'b_repr':>7} {'reprs/comb':>10} {'combs':>6} {'examples':>8} {'cut':>4}"]
    for r in rows:
        b_repr = "-" if r["b_repr"] is None else r["b_repr"]
        rpc = "-" if r["reprs_per_comb"] is None else r["reprs_per_comb"]
        lines.append(f"{r['w']:>3} {r['b_comb']:>7} {b_repr:>7} {rpc:>10} {r['n_combinations']:>6} "
                     f"{r['n_examples']:>8} {r['truncated_combinations']:>4}")
    lines.append(f"total {sum(r['n_examples'] for r in rows)}")
    return "\n".join(lines) + "\n"


# -- featurize ----------------------------------------------------------------

def _load_dataset(cfg: PipelineConfig, out: Path, split: str):
    ds_dir = cfg.path("datasets", out) / split
    header = io.read_dataset_header(ds_dir)
    _check_hash(header.get("config_hash"), cfg.stage_hash("synthesize"), ds_dir)
    manifest = io.read_manifest(ds_dir)
    samples = io.read_samples(ds_dir, header)
    index = {l: i for i, l in enumerate(header["labels"])}
    targets = np.zeros((len(manifest), len(index)), dtype=np.uint8)
    for row, rec in enumerate(manifest):
        targets[row, [index[l] for l in rec["labels"]]] = 1
    ws = np.array([rec["w"] for rec in manifest], dtype=np.int32)
    return header, samples, targets, ws


def featurize(cfg: PipelineConfig, out: Path, split: str, fit_stats: bool | None = None) -> dict:
    """Spectrograms of one split, standardized with training statistics.

    Statistics are fitted on the training split only; any other split reuses them.
    """
    if fit_stats is None:
        fit_stats = split == "train"
    if fit_stats and split != "train":
        raise DataError(f"normalization statistics may only be fitted on the training split, not {split!r}")
    header, samples, targets, ws = _load_dataset(cfg, out, split)
    stft = cfg.stft()
    rate = float(header["rate"])
    feat_dir = cfg.path("features", out)
    feat_dir.mkdir(parents=True, exist_ok=True)
    t, v = stft.shape(int(header["n_samples"]), rate)
    specs = np.empty((samples.shape[0], t, v), dtype=np.float32)
    for i in range(samples.shape[0]):
        specs[i] = F.spectrogram(np.asarray(samples[i], dtype=np.float64), rate, stft)
    config_hash = cfg.stage_hash("featurize")
    stats_path = feat_dir / "stats.json"
    if fit_stats:
        stats = F.fit_normalization(iter(specs), config_hash=config_hash)
        stats.save(stats_path)
    else:
        if not stats_path.exists():
            raise DataError("training statistics missing; featurize the train split first")
        stats = F.FeatureStats.load(stats_path)
        _check_hash(stats.config_hash, config_hash, stats_path)
    x = F.normalize_spectrogram(specs, stats).astype(np.float32)
    F.write_feature_cache(feat_dir / f"{split}.feat", x, targets, ws,
                          {"split": split, "labels": header["labels"], "config_hash": config_hash,
                           "stft": stft.to_dict(), "rate": rate})
    return {"split": split, "n": int(x.shape[0]), "shape": [t, v]}


def load_features(cfg: PipelineConfig, out: Path, split: str):
    path = cfg.path("features", out) / f"{split}.feat"
    if not path.exists():
        raise DataError(f"feature cache {path} missing; run featurize --split {split}")
    try:
        x, y, ws, header = F.read_feature_cache(path)
    except (ValueError, KeyError) as exc:
        raise DataError(f"unreadable feature cache {path}: {exc}") from exc
    _check_hash(header.get("config_hash"), cfg.stage_hash("featurize"), path)
    return x, y, ws, header


# -- train / search / evaluate ------------------------------------------------

def hyperparams(cfg: PipelineConfig, n_labels: int, v_in: int, overrides: dict | None = None) -> M.ColdHyperParams:
    m = dict(cfg.model_section(), **(overrides or {}))
    m = {k: m[k] for k in ("q", "k", "n_head", "p_d", "relu_first") if k in m}
    try:
        return M.ColdHyperParams(n_labels=n_labels, v_in=v_in, **m)
    except (TypeError, ValueError) as exc:
        from .config import ConfigError
        raise ConfigError(f"invalid model section: {exc}") from exc


def run_dir(cfg: PipelineConfig, out: Path) -> Path:
    d = cfg.path("runs", out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def train(cfg: PipelineConfig, out: Path, callback=None) -> T.TrainResult:
    x_tr, y_tr, _, h_tr = load_features(cfg, out, "train")
    x_va, y_va, w_va, _ = load_features(cfg, out, "val")
    hp = hyperparams(cfg, y_tr.shape[1], x_tr.shape[2])
    tc = cfg.train_config()
    result = T.train(hp, tc, x_tr, y_tr, x_va, y_va, w_va, callback=callback)
    d = run_dir(cfg, out)
    config_hash = cfg.stage_hash("train")
    M.save_checkpoint(d / CHECKPOINT, result.params, hp, tc.seed,
                      {"config_hash": config_hash, "labels": h_tr["labels"], "best_step": result.best_step,
                       "best_val_wmf1": result.best_score, "threshold": result.best_threshold})
    (d / "curve.txt").write_text(result.curve_text())
    with open(d / "curve.jsonl", "w") as fh:
        for row in result.curve:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return result


def search(cfg: PipelineConfig, out: Path) -> A.AshaResult:
    x_tr, y_tr, _, _ = load_features(cfg, out, "train")
    x_va, y_va, w_va, _ = load_features(cfg, out, "val")
    a = dict(cfg.section("asha"))
    space = a.pop("space", {})
    try:
        acfg = A.AshaConfig(space=space, seed=derive_seed(cfg.seed, "search"), **a)
    except (TypeError, ValueError) as exc:
        from .config import ConfigError
        raise ConfigError(f"invalid asha section: {exc}") from exc
    base_train = cfg.train_config()

    def objective(config: dict, resource: float, trial_id: int) -> float:
        hp = hyperparams(cfg, y_tr.shape[1], x_tr.shape[2], config)
        tc = T.TrainConfig(lr=float(config.get("lr", base_train.lr)),
                           weight_decay=float(config.get("weight_decay", base_train.weight_decay)),
                           batch_size=int(config.get("batch_size", base_train.batch_size)),
                           epochs=int(round(resource)), seed=derive_seed(cfg.seed, f"trial/{trial_id}"))
        return T.train(hp, tc, x_tr, y_tr, x_va, y_va, w_va).best_score

    result = A.asha_search(acfg, objective)
    d = run_dir(cfg, out) / "search"
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "trials.jsonl", "w") as fh:
        for rec in result.table():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    io.write_json(d / "best.json", {"config": result.best_config, "score": result.best_score,
                                    "trial_id": result.best_trial, "rungs": result.rungs,
                                    "promotions": {str(k): v for k, v in result.promotions.items()},
                                    "config_hash": cfg.stage_hash("featurize")})
    return result


def load_model(cfg: PipelineConfig, out: Path):
    path = run_dir(cfg, out) / CHECKPOINT
    if not path.exists():
        raise DataError(f"checkpoint {path} missing; run train first")
    try:
        params, hp, header = M.load_checkpoint(path)
    except (ValueError, KeyError) as exc:
        raise DataError(f"unreadable checkpoint {path}: {exc}") from exc
    _check_hash(header["extra"].get("config_hash"), cfg.stage_hash("train"), path)
    return params, hp, header


def tune_threshold(cfg: PipelineConfig, out: Path, split: str = "val") -> dict:
    params, hp, _ = load_model(cfg, out)
    x, y, ws, _ = load_features(cfg, out, split)
    probs = M.predict(x.astype(np.float64), params, hp)
    thr, score = T.tune_threshold(probs, y, ws)
    rec = {"threshold": thr, "weighted_mf1": score, "split": split, "config_hash": cfg.stage_hash("train")}
    io.write_json(run_dir(cfg, out) / "threshold.json", rec)
    return rec


def _threshold(cfg: PipelineConfig, out: Path, header: dict, override: float | None) -> float:
    if override is not None:
        return float(override)
    path = run_dir(cfg, out) / "threshold.json"
    if path.exists():
        rec = io.read_json(path)
        _check_hash(rec.get("config_hash"), cfg.stage_hash("train"), path)
        return float(rec["threshold"])
    return float(header["extra"].get("threshold", 0.5))


def label_rms(patterns: dict[str, list]) -> dict[str, float]:
    """Mean RMS current of each label's normalized patterns."""
    return {l: float(np.mean([np.sqrt(np.mean(s.current.samples ** 2)) for s in sigs]))
            for l, sigs in sorted(patterns.items())}


@dataclass
class Evaluation:
    report: T.EvalReport
    lowest_rms: list[dict]


def evaluate(cfg: PipelineConfig, out: Path, split: str = "test", threshold: float | None = None,
             probs: np.ndarray | None = None) -> Evaluation:
    """Score a split; ``probs`` replaces the model's predictions when given."""
    x, y, ws, fh = load_features(cfg, out, split)
    if probs is None:
        params, hp, header = load_model(cfg, out)
        probs = M.predict(x.astype(np.float64), params, hp)
        thr = _threshold(cfg, out, header, threshold)
    else:
        thr = 0.5 if threshold is None else float(threshold)
    labels = fh["labels"]
    report = T.evaluate(probs, y, ws, labels, thr)
    rms = label_rms(load_baseline(cfg, out))
    lowest = sorted(rms.items(), key=lambda kv: (kv[1], kv[0]))[:10]
    lowest_rows = [{"label": l, "rms": r, "f1": report.per_label_f1.get(l, float("nan"))} for l, r in lowest]
    d = run_dir(cfg, out) / f"eval_{split}"
    d.mkdir(parents=True, exist_ok=True)
    io.write_json(d / "report.json", dict(report.to_dict(), config_hash=cfg.stage_hash("train"), split=split))
    (d / "report.txt").write_text(report.text())
    _write_csv(d / "per_w.csv", ["w", "n", "mean_f1"],
               [[w, report.counts[w], report.per_w[w]] for w in sorted(report.per_w)])
    _write_csv(d / "per_label.csv", ["label", "f1"], [[l, v] for l, v in report.per_label_f1.items()])
    _write_csv(d / "lowest_rms.csv", ["label", "rms", "f1"], [[r["label"], r["rms"], r["f1"]] for r in lowest_rows])
    return Evaluation(report, lowest_rows)


def _write_csv(path: Path, head: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        for r in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in r])
