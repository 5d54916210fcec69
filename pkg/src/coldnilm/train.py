"""Example-based F1 metrics, threshold tuning, Adam and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import model as M

log = logging.getLogger(__name__)

GRID_STEP = 1e-4


class EmptySubset(ValueError):
    pass


# -- metrics ------------------------------------------------------------------

def _f1_from_counts(tp, fp, fn, literal: bool = False):
    """F1 = 2 PR RE / (PR + RE) = 2TP / (2TP + FP + FN); 1 when nothing is true or predicted."""
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 1.0)
    if literal:
        # PR RE / (PR + RE) without the factor two; the empty case stays at 1
        f1 = np.where(denom > 0, f1 / 2, f1)
    return f1


def f1_per_example(y, y_bin, literal: bool = False) -> np.ndarray:
    y = np.asarray(y).astype(bool)
    y_bin = np.asarray(y_bin).astype(bool)
    if y.shape != y_bin.shape:
        raise ValueError(f"target shape {y.shape} != prediction shape {y_bin.shape}")
    tp = (y & y_bin).sum(axis=-1)
    fp = (~y & y_bin).sum(axis=-1)
    fn = (y & ~y_bin).sum(axis=-1)
    return _f1_from_counts(tp, fp, fn, literal)


def f1_example(y, y_bin, literal: bool = False) -> float:
    return float(f1_per_example(np.atleast_1d(y), np.atleast_1d(y_bin), literal))


def mean_f1(y, y_bin, literal: bool = False) -> float:
    y = np.atleast_2d(y)
    if y.shape[0] == 0:
        raise EmptySubset("mean F1 of an empty subset")
    return float(f1_per_example(y, np.atleast_2d(y_bin), literal).mean())


def weighted_mf1(per_w: Mapping[int, float], counts: Mapping[int, int]) -> float:
    """sum_w (|S_w| / |S|) * meanF1_w."""
    total = sum(counts[w] for w in per_w)
    if total <= 0:
        raise EmptySubset("weighted mF1 needs at least one example")
    return float(sum(counts[w] / total * per_w[w] for w in sorted(per_w)))


def per_w_f1(y, y_bin, ws, literal: bool = False) -> tuple[dict[int, float], dict[int, int]]:
    f1 = f1_per_example(y, y_bin, literal)
    ws = np.asarray(ws)
    per_w, counts = {}, {}
    for w in np.unique(ws):
        sel = ws == w
        per_w[int(w)] = float(f1[sel].mean())
        counts[int(w)] = int(sel.sum())
    return per_w, counts


def threshold_grid(step: float = GRID_STEP) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.arange(1, n) / n


def tune_threshold(probs, targets, ws=None, step: float = GRID_STEP,
                   literal: bool = False) -> tuple[float, float]:
    """Grid threshold maximizing weighted mF1 (binarization ``p >= t``); ties go to the smaller one.

    Counts at every grid point come from per-example histograms of where
    each probability falls on the grid, so the sweep costs O(n * grid).
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets)).astype(bool)
    if probs.shape[0] == 0:
        raise EmptySubset("threshold tuning needs at least one example")
    ws = np.zeros(probs.shape[0], dtype=int) if ws is None else np.asarray(ws)
    grid = threshold_grid(step)
    G = grid.shape[0]
    # number of grid points <= p: p >= grid[k] for every k below it
    idx = np.searchsorted(grid, probs, side="right")
    ws_unique = np.unique(ws)
    sums = {int(w): np.zeros(G) for w in ws_unique}
    chunk = max(1, 200_000 // (G + 1))
    for a in range(0, probs.shape[0], chunk):
        b = min(a + chunk, probs.shape[0])
        n = b - a
        rows = np.repeat(np.arange(n), probs.shape[1]) * (G + 1)
        flat_idx = rows + idx[a:b].ravel()
        pos = targets[a:b].ravel()
        h_pos = np.bincount(flat_idx[pos], minlength=n * (G + 1)).reshape(n, G + 1)
        h_neg = np.bincount(flat_idx[~pos], minlength=n * (G + 1)).reshape(n, G + 1)
        # predicted positive at grid[k] <=> idx >= k + 1
        tp = np.cumsum(h_pos[:, ::-1], axis=1)[:, ::-1][:, 1:]
        fp = np.cumsum(h_neg[:, ::-1], axis=1)[:, ::-1][:, 1:]
        fn = targets[a:b].sum(axis=1)[:, None] - tp
        f1 = _f1_from_counts(tp, fp, fn, literal)
        for w in ws_unique:
            sel = ws[a:b] == w
            if sel.any():
                sums[int(w)] += f1[sel].sum(axis=0)
    counts = {int(w): int((ws == w).sum()) for w in ws_unique}
    total = sum(counts.values())
    score = np.zeros(G)
    for w in sorted(sums):
        score += counts[w] / total * (sums[w] / counts[w])
    k = int(np.argmax(score))
    return float(grid[k]), float(score[k])


@dataclass
class EvalReport:
    per_w: dict[int, float]
    weighted_mf1: float
    threshold: float
    per_label_f1: dict[str, float]
    counts: dict[int, int]

    def to_dict(self) -> dict:
        return {"per_w": {str(w): v for w, v in sorted(self.per_w.items())},
                "weighted_mf1": self.weighted_mf1, "threshold": self.threshold,
                "per_label_f1": dict(self.per_label_f1),
                "counts": {str(w): v for w, v in sorted(self.counts.items())}}

    def text(self) -> str:
        lines = [f"threshold     {self.threshold:.4f}", f"weighted mF1  {self.weighted_mf1:.4f}", "",
                 f"{'w':>3} {'n':>7} {'mean F1':>8}"]
        lines += [f"{w:>3} {self.counts[w]:>7} {self.per_w[w]:>8.4f}" for w in sorted(self.per_w)]
        lines += ["", f"{'label':<20} {'F1':>7}"]
        lines += [f"{l:<20} {v:>7.4f}" for l, v in self.per_label_f1.items()]
        return "\n".join(lines) + "\n"


def label_f1(y, y_bin) -> np.ndarray:
    """Per-label F1 over all examples (binary F1 of one column; 1 if the label never occurs nor fires)."""
    y = np.asarray(y).astype(bool)
    y_bin = np.asarray(y_bin).astype(bool)
    tp = (y & y_bin).sum(axis=0)
    fp = (~y & y_bin).sum(axis=0)
    fn = (y & ~y_bin).sum(axis=0)
    return _f1_from_counts(tp, fp, fn)


def evaluate(probs, targets, ws, labels: Sequence[str], threshold: float,
             literal: bool = False) -> EvalReport:
    y_bin = np.asarray(probs) >= threshold
    per_w, counts = per_w_f1(targets, y_bin, ws, literal)
    per_label = dict(zip(labels, (float(v) for v in label_f1(targets, y_bin))))
    return EvalReport(per_w, weighted_mf1(per_w, counts), float(threshold), per_label, counts)


# -- optimizer ----------------------------------------------------------------

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: Mapping, state: AdamState, lr: float, weight_decay: float) -> None:
    """One in-place Adam update with decoupled decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""
    state.t += 1
    c1 = 1.0 - BETA1 ** state.t
    c2 = 1.0 - BETA2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= BETA1
        m += (1 - BETA1) * g
        v *= BETA2
        v += (1 - BETA2) * g * g
        step = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS) + weight_decay * p
        p -= (lr * step).astype(p.dtype, copy=False)


# -- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 2.8e-2
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    eval_every: int = 0  # steps; 0 evaluates at the end of every epoch

    def __post_init__(self):
        if not self.lr > 0 or self.weight_decay < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"invalid training configuration {self}")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    curve: list[dict] = field(default_factory=list)  # step, epoch, loss, val_wmf1, threshold
    losses: list[float] = field(default_factory=list)  # every step
    best_step: int = 0
    best_score: float = -math.inf
    best_threshold: float = 0.5

    def curve_text(self) -> str:
        lines = [f"{'step':>7} {'epoch':>5} {'loss':>10} {'val_wmF1':>9} {'thr':>7}"]
        lines += [f"{r['step']:>7} {r['epoch']:>5} {r['loss']:>10.6f} {r['val_wmf1']:>9.5f} {r['threshold']:>7.4f}"
                  for r in self.curve]
        return "\n".join(lines) + "\n"


def validate(params, hp, X, Y, ws, tuned: bool = True) -> tuple[float, float]:
    """(weighted mF1, threshold) on a validation set; threshold 0.5 unless tuned."""
    probs = M.predict(X, params, hp)
    if tuned:
        thr, score = tune_threshold(probs, Y, ws)
        return score, thr
    per_w, counts = per_w_f1(Y, probs >= 0.5, ws)
    return weighted_mf1(per_w, counts), 0.5


def train(hp: M.ColdHyperParams, cfg: TrainConfig, X_train, Y_train, X_val, Y_val, ws_val,
          params: dict | None = None, dtype=np.float32, tuned_validation: bool = True,
          callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Mini-batch Adam on mean BCE; the best-on-validation parameters are kept.

    Shuffling uses ``default_rng([seed, epoch])`` and dropout masks use
    ``default_rng([seed, epoch, batch])``, so a run is a pure function of its inputs.
    """
    if params is None:
        params = M.init_params(hp, cfg.seed, dtype)
    params = {k: np.array(v, dtype=dtype) for k, v in params.items()}
    X_train = np.asarray(X_train, dtype=dtype)
    Y_train = np.asarray(Y_train, dtype=dtype)
    X_val = np.asarray(X_val, dtype=dtype)
    n = X_train.shape[0]
    if n == 0:
        raise EmptySubset("empty training set")
    state = AdamState.zeros_like(params)
    result = TrainResult({k: v.copy() for k, v in params.items()})
    step = 0
    window_losses: list[float] = []

    def do_eval(epoch):
        score, thr = validate(params, hp, X_val, Y_val, ws_val, tuned_validation)
        loss = float(np.mean(window_losses)) if window_losses else float("nan")
        window_losses.clear()
        row = {"step": step, "epoch": epoch, "loss": loss, "val_wmf1": score, "threshold": thr}
        result.curve.append(row)
        if score > result.best_score:
            result.best_score, result.best_step, result.best_threshold = score, step, thr
            result.params = {k: v.copy() for k, v in params.items()}
        if callback:
            callback(row)

    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        for b, a in enumerate(range(0, n, cfg.batch_size)):
            sel = order[a:a + cfg.batch_size]
            rng = np.random.default_rng([cfg.seed, epoch, b])
            loss, grads = M.loss_and_grads(X_train[sel], Y_train[sel], params, hp, rng, training=True)
            adam_step(params, grads, state, cfg.lr, cfg.weight_decay)
            step += 1
            result.losses.append(loss)
            window_losses.append(loss)
            if cfg.eval_every and step % cfg.eval_every == 0:
                do_eval(epoch)
        if not cfg.eval_every:
            do_eval(epoch)
    if not result.curve:
        do_eval(0)
    return result
