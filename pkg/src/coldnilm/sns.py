"""Synthesis of aggregate-consumption windows from normalized patterns.

For every concurrency level ``w`` of a schedule the synthesizer samples label
combinations, decides how many distinct pattern tuples ("representations")
each combination receives, places every pattern at a random start inside the
observation window, aligns the voltages of all components to the first one
and sums the shifted currents.

Randomness is keyed by ``(seed, w)`` for combination sampling and by
``(seed, w, combination index)`` for everything inside one combination, so
rendering combinations in parallel yields the same bytes as a serial run.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import kernels
from .signal import Signature

log = logging.getLogger(__name__)

Patterns = Mapping[str, Sequence[Signature]]


class Exhausted(ValueError):
    """More unique representations were requested than the patterns allow."""


# -- schedule -----------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleEntry:
    w: int
    b_comb: int
    b_repr: int | None = None  # None: no bound ("-" in the tables)

    def __post_init__(self):
        if self.w < 1 or self.b_comb < 1 or (self.b_repr is not None and self.b_repr < 1):
            raise ValueError(f"invalid schedule entry {self}")

    @property
    def reprs_per_comb(self) -> int | None:
        if self.b_repr is None:
            return None
        return max(1, math.floor(self.b_repr / self.b_comb + 0.5))


@dataclass(frozen=True)
class SynthesisSchedule:
    entries: tuple[ScheduleEntry, ...]
    t_obs: float = 5.0
    seed: int = 0
    label_distribution: Mapping[str, float] | None = None  # None: uniform
    mode: str = "budget"

    def __post_init__(self):
        ws = [e.w for e in self.entries]
        if len(set(ws)) != len(ws):
            raise ValueError("schedule w values must be distinct")
        if self.mode not in ("budget", "literal_omega"):
            raise ValueError(f"unknown allocation mode {self.mode!r}")
        if self.label_distribution is not None:
            total = sum(self.label_distribution.values())
            if not math.isclose(total, 1.0, abs_tol=1e-9):
                raise ValueError(f"label distribution sums to {total}, not 1")

    @property
    def ws(self) -> list[int]:
        return [e.w for e in self.entries]


def read_schedule_table(path) -> tuple[ScheduleEntry, ...]:
    """Read a ``w,b_comb,b_repr`` CSV table; ``-`` or an empty cell means unbounded."""
    entries = []
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if line.strip() and not line.startswith("#"))
        for row in rows:
            row = {k.strip(): (v or "").strip() for k, v in row.items()}
            b_repr = row.get("b_repr", "-")
            entries.append(ScheduleEntry(int(row["w"]), int(row["b_comb"]),
                                         None if b_repr in ("", "-") else int(b_repr)))
    return tuple(entries)


def write_schedule_table(path, entries: Sequence[ScheduleEntry]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["w", "b_comb", "b_repr", "reprs/comb"])
        for e in entries:
            writer.writerow([e.w, e.b_comb, "-" if e.b_repr is None else e.b_repr,
                             "-" if e.reprs_per_comb is None else e.reprs_per_comb])


# -- baseline split -----------------------------------------------------------

@dataclass
class BaselineSplit:
    train: dict[str, list[Signature]]
    val: dict[str, list[Signature]]
    test: dict[str, list[Signature]]

    def __getitem__(self, name: str) -> dict[str, list[Signature]]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer counts summing to ``n``, proportional to ``fractions``; ties favour earlier slots."""
    quotas = [Fraction(f).limit_denominator(10**6) * n for f in fractions]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_baseline(patterns: Patterns, fractions=(0.6, 0.1, 0.3), seed: int = 0) -> BaselineSplit:
    if len(fractions) != 3 or not math.isclose(sum(fractions), 1.0):
        raise ValueError("need three fractions summing to 1")
    rng = np.random.default_rng(seed)
    parts: list[dict[str, list[Signature]]] = [{}, {}, {}]
    for label in sorted(patterns):
        sigs = list(patterns[label])
        if not sigs:
            raise ValueError(f"label {label!r} has no patterns")
        order = rng.permutation(len(sigs))
        counts = largest_remainder(len(sigs), fractions)
        bounds = np.cumsum([0] + counts)
        for k in range(3):
            parts[k][label] = [sigs[i] for i in order[bounds[k]:bounds[k + 1]]]
    return BaselineSplit(*parts)


# -- combinations and representations ----------------------------------------

def count_combinations(n_labels: int, w: int) -> int:
    if not 1 <= w <= n_labels:
        raise ValueError(f"need 1 <= w <= n_labels, got w={w}, n_labels={n_labels}")
    return math.comb(n_labels, w)


def sample_combinations(labels: Sequence[str], w: int, b_comb_hat: int,
                        pr: Mapping[str, float] | None, rng: np.random.Generator) -> list[tuple[str, ...]]:
    """Draw ``min(C(|labels|, w), b_comb_hat)`` distinct label sets.

    Each set is drawn as ``w`` labels without replacement, weighted by ``pr``;
    duplicates are rejected and redrawn. When every combination is needed the
    full set is enumerated instead of waiting on the coupon collector.
    Returned tuples keep the order of ``labels``.
    """
    labels = list(labels)
    if pr is not None:
        labels = [l for l in labels if pr.get(l, 0.0) > 0]
    n = len(labels)
    if not 1 <= w <= n:
        raise ValueError(f"cannot draw {w} of {n} labels")
    total = math.comb(n, w)
    target = min(total, b_comb_hat)
    if target == total:
        return [tuple(labels[i] for i in c) for c in itertools.combinations(range(n), w)]
    p = None
    if pr is not None:
        p = np.array([pr[l] for l in labels], dtype=np.float64)
        p /= p.sum()
    seen: set[tuple[int, ...]] = set()
    out = []
    while len(out) < target:
        key = tuple(sorted(int(i) for i in rng.choice(n, size=w, replace=False, p=p)))
        if key not in seen:
            seen.add(key)
            out.append(tuple(labels[i] for i in key))
    return out


def combination_weight(combo: Sequence[str], pr: Mapping[str, float]) -> float:
    """Repetition weight: product of the combo's label probabilities over their total sum."""
    return math.prod(pr[l] for l in combo) / sum(pr.values())


def n_representations(combo: Sequence[str], patterns: Patterns) -> int:
    return math.prod(len(patterns[l]) for l in combo)


def allocate_representations(combo: Sequence[str], patterns: Patterns, b_repr_hat: int | None,
                             mode: str = "budget", *, n_combinations: int = 1,
                             pr: Mapping[str, float] | None = None) -> int:
    """Number of distinct aggregated signals to build for one combination.

    ``budget`` spreads ``b_repr_hat`` evenly over ``n_combinations`` (at least
    one each) and caps by availability. ``literal_omega`` evaluates
    ``ceil(min(omega * prod |P_l|, b_repr_hat))``.
    """
    available = n_representations(combo, patterns)
    if mode == "budget":
        if b_repr_hat is None:
            return available
        per_comb = max(1, math.floor(b_repr_hat / n_combinations + 0.5))
        return min(available, per_comb)
    if mode == "literal_omega":
        if pr is None:
            raise ValueError("literal_omega allocation needs a label distribution")
        value = combination_weight(combo, pr) * available
        if b_repr_hat is not None:
            value = min(value, b_repr_hat)
        return min(available, math.ceil(value))
    raise ValueError(f"unknown allocation mode {mode!r}")


def sample_representations(combo: Sequence[str], patterns: Patterns, count: int,
                           rng: np.random.Generator) -> list[tuple[int, ...]]:
    """``count`` distinct tuples of pattern indices, one index per label of ``combo``."""
    sizes = [len(patterns[l]) for l in combo]
    total = math.prod(sizes)
    if count > total:
        raise Exhausted(f"{count} representations requested, only {total} exist for {combo}")
    if total <= 1_000_000:
        flat = rng.choice(total, size=count, replace=False)
        return [tuple(int(i) for i in np.unravel_index(f, sizes)) for f in flat]
    seen: set[tuple[int, ...]] = set()
    out = []
    while len(out) < count:
        t = tuple(int(rng.integers(s)) for s in sizes)
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


# -- placement, alignment, summation -----------------------------------------

def placement_margin(n_samples: int, window_len: int, period: int) -> int:
    margin = max(period, math.ceil(0.05 * window_len))
    return min(margin, n_samples, window_len)


def place_in_window(n_samples: int, window_len: int, period: int, rng: np.random.Generator) -> int:
    """Random start offset (may be negative) keeping at least the margin inside the window."""
    margin = placement_margin(n_samples, window_len, period)
    return int(rng.integers(-(n_samples - margin), window_len - margin, endpoint=True))


def overlap(offset: int, n_samples: int, window_len: int) -> int:
    return max(0, min(offset + n_samples, window_len) - max(offset, 0))


def phase_align(voltages: Sequence[np.ndarray], offsets: Sequence[int], period: int) -> list[int]:
    """Circular shifts that align every voltage with the first one.

    Alignment is judged at window time: the reference is the first component's
    voltage over the first mains period of the window, and each other
    component gets the lag in (-period/2, period/2] maximizing the
    cross-correlation against it.
    """
    if not voltages:
        return []
    v0 = np.ascontiguousarray(voltages[0], dtype=np.float64)
    ref = v0[(np.arange(period) - offsets[0]) % v0.shape[0]]
    lags = np.arange(-((period - 1) // 2), period // 2 + 1, dtype=np.int64)
    shifts = [0]
    for v, off in zip(voltages[1:], offsets[1:]):
        corr = kernels.lag_correlation(ref, np.ascontiguousarray(v, dtype=np.float64), int(off), lags)
        shifts.append(int(lags[int(np.argmax(corr))]))
    return shifts


def aggregate(currents: Sequence[np.ndarray], offsets: Sequence[int], shifts: Sequence[int],
              window_len: int) -> np.ndarray:
    """Pointwise sum of the shifted, placed component currents (fixed placement order)."""
    out = np.zeros(window_len, dtype=np.float64)
    for cur, off, sh in zip(currents, offsets, shifts):
        kernels.add_shifted(out, np.ascontiguousarray(cur, dtype=np.float64), int(off), int(sh))
    return out


# -- collections --------------------------------------------------------------

@dataclass(frozen=True)
class Placement:
    label: str
    source_id: str
    start_offset: int
    phase_shift: int = 0


@dataclass
class AggregateExample:
    id: str
    w: int
    current: np.ndarray
    labels: np.ndarray  # multi-hot over the dataset label list
    placements: list[Placement]

    @property
    def label_names(self) -> list[str]:
        return [p.label for p in self.placements]

    def manifest_record(self) -> dict:
        return {
            "id": self.id,
            "w": self.w,
            "labels": self.label_names,
            "sources": [p.source_id for p in self.placements],
            "offsets": [p.start_offset for p in self.placements],
            "shifts": [p.phase_shift for p in self.placements],
        }


@dataclass
class ComboPlan:
    w: int
    index: int
    combo: tuple[str, ...]
    requested: int
    representations: list[tuple[int, ...]]
    offsets: list[list[int]] = field(default_factory=list)

    @property
    def truncated(self) -> bool:
        return len(self.representations) < self.requested


def _combo_rng(seed: int, w: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, w, index])


def plan_entry(patterns: Patterns, entry: ScheduleEntry, schedule: SynthesisSchedule,
               labels: Sequence[str], window_len: int, period: int) -> list[ComboPlan]:
    """Combinations, representations and start offsets for one concurrency level."""
    pr = schedule.label_distribution
    support = [l for l in labels if patterns.get(l)]
    if len(support) < entry.w:
        log.warning("w=%d skipped: only %d labels have patterns", entry.w, len(support))
        return []
    combos = sample_combinations(support, entry.w, entry.b_comb, pr,
                                 np.random.default_rng([schedule.seed, entry.w]))
    if schedule.mode == "budget" and entry.b_repr is not None:
        per_comb = entry.reprs_per_comb
    else:
        per_comb = None
    uniform = {l: 1.0 / len(labels) for l in labels}
    plans = []
    for j, combo in enumerate(combos):
        rng = _combo_rng(schedule.seed, entry.w, j)
        count = allocate_representations(combo, patterns, entry.b_repr, schedule.mode,
                                         n_combinations=entry.b_comb, pr=pr or uniform)
        requested = per_comb if per_comb is not None else count
        reprs = sample_representations(combo, patterns, min(count, n_representations(combo, patterns)), rng)
        offsets = [[place_in_window(len(patterns[l][i]), window_len, period, rng)
                    for l, i in zip(combo, rep)] for rep in reprs]
        plan = ComboPlan(entry.w, j, tuple(combo), requested, reprs, offsets)
        if plan.truncated:
            log.warning("w=%d combination %d %s cut to %d of %d representations",
                        entry.w, j, combo, len(reprs), requested)
        plans.append(plan)
    return plans


class Collection:
    """Planned synthetic dataset; iterate to render the aggregate examples."""

    def __init__(self, patterns: Patterns, schedule: SynthesisSchedule, labels: Sequence[str],
                 f_down: float, f_ref: float = 50.0, threads: int = 1):
        self.patterns = patterns
        self.schedule = schedule
        self.labels = list(labels)
        self.index = {l: i for i, l in enumerate(self.labels)}
        self.f_down = f_down
        self.window_len = int(round(schedule.t_obs * f_down))
        self.period = int(round(f_down / f_ref))
        self.threads = max(1, int(threads))
        for label, sigs in patterns.items():
            for s in sigs:
                if s.rate != f_down:
                    raise ValueError(f"pattern {s.source_id} is at {s.rate} Hz, expected {f_down}")
        self.plans = {e.w: plan_entry(patterns, e, schedule, self.labels, self.window_len, self.period)
                      for e in schedule.entries}

    def counts(self) -> dict[int, int]:
        return {w: sum(len(p.representations) for p in plans) for w, plans in self.plans.items()}

    def reprs_per_comb(self) -> dict[int, list[int]]:
        return {w: [len(p.representations) for p in plans] for w, plans in self.plans.items()}

    def truncations(self) -> list[dict]:
        return [{"w": p.w, "combination": p.index, "labels": list(p.combo),
                 "requested": p.requested, "built": len(p.representations)}
                for plans in self.plans.values() for p in plans if p.truncated]

    def source_ids(self) -> set[str]:
        return {self.patterns[l][i].source_id
                for plans in self.plans.values() for p in plans
                for rep in p.representations for l, i in zip(p.combo, rep)}

    def summary(self) -> list[dict]:
        counts = self.counts()
        rows = []
        for e in self.schedule.entries:
            plans = self.plans[e.w]
            rows.append({"w": e.w, "b_comb": e.b_comb, "b_repr": e.b_repr,
                         "reprs_per_comb": e.reprs_per_comb,
                         "n_combinations": len(plans), "n_examples": counts[e.w],
                         "truncated_combinations": sum(p.truncated for p in plans)})
        return rows

    def render(self, plan: ComboPlan) -> list[AggregateExample]:
        out = []
        for r, (rep, offsets) in enumerate(zip(plan.representations, plan.offsets)):
            sigs = [self.patterns[l][i] for l, i in zip(plan.combo, rep)]
            shifts = phase_align([s.voltage.samples for s in sigs], offsets, self.period)
            current = aggregate([s.current.samples for s in sigs], offsets, shifts, self.window_len)
            multi_hot = np.zeros(len(self.labels), dtype=np.uint8)
            for l in plan.combo:
                multi_hot[self.index[l]] = 1
            placements = [Placement(s.label, s.source_id, o, sh)
                          for s, o, sh in zip(sigs, offsets, shifts)]
            out.append(AggregateExample(f"w{plan.w:02d}-c{plan.index:05d}-r{r:04d}",
                                        plan.w, current, multi_hot, placements))
        return out

    def __iter__(self) -> Iterator[AggregateExample]:
        plans = [p for e in self.schedule.entries for p in self.plans[e.w]]
        if self.threads == 1:
            for p in plans:
                yield from self.render(p)
            return
        chunk = 8 * self.threads
        with ThreadPoolExecutor(self.threads) as pool:
            # map keeps submission order, so output matches the serial run
            for k in range(0, len(plans), chunk):
                for batch in pool.map(self.render, plans[k:k + chunk]):
                    yield from batch


def synthesize_collection(patterns: Patterns, schedule: SynthesisSchedule, labels: Sequence[str],
                          f_down: float, f_ref: float = 50.0, threads: int = 1) -> Collection:
    return Collection(patterns, schedule, labels, f_down, f_ref, threads)
