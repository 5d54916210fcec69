"""Asynchronous successive halving over a discrete search grid.

A trial completed at rung k is promoted when it ranks in the top
floor(n_k / eta) of the n_k trials completed there. Once every trial has
been started the quota relaxes to ceil(n_k / eta), so each rung finally
promotes exactly ceil(n_k / eta) trials.

Worker slots are simulated with an event queue ordered by finish time
(a job's duration is its resource), so the asynchronous promotion order is
reproduced exactly on one thread.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

Objective = Callable[[dict, float, int], float]  # (config, resource, trial_id) -> score, higher is better


@dataclass(frozen=True)
class AshaConfig:
    max_resource: float = 20
    reduction_factor: int = 3
    min_resource: float = 1
    n_trials: int = 27
    space: Mapping[str, Sequence] = field(default_factory=dict)
    n_workers: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.reduction_factor < 2:
            raise ValueError("reduction factor must be at least 2")
        if not 0 < self.min_resource <= self.max_resource:
            raise ValueError("need 0 < min_resource <= max_resource")
        if self.n_trials < self.reduction_factor:
            raise ValueError("n_trials must be at least the reduction factor")
        if self.n_workers < 1:
            raise ValueError("need at least one worker")
        if not self.space or any(len(v) == 0 for v in self.space.values()):
            raise ValueError("search space needs at least one value per dimension")

    def rungs(self) -> list[float]:
        """Resources min * eta^i, with the last rung capped at max_resource."""
        out = []
        r = self.min_resource
        while r < self.max_resource:
            out.append(r)
            r *= self.reduction_factor
        out.append(self.max_resource)
        return out

    def grid_size(self) -> int:
        return math.prod(len(v) for v in self.space.values())


@dataclass
class Trial:
    trial_id: int
    config: dict
    scores: dict[int, float] = field(default_factory=dict)  # rung -> score

    @property
    def rung(self) -> int:
        return max(self.scores) if self.scores else -1

    def record(self, rungs: Sequence[float]) -> dict:
        r = self.rung
        return {"trial_id": self.trial_id, "config": self.config, "rung": r,
                "resource": rungs[r] if r >= 0 else 0, "score": self.scores.get(r),
                "scores": {str(k): v for k, v in sorted(self.scores.items())}}


@dataclass
class AshaResult:
    best_config: dict
    best_score: float
    best_trial: int
    trials: list[Trial]
    promotions: dict[int, int]  # rung -> trials promoted out of it
    completed: dict[int, int]  # rung -> jobs completed at it
    rungs: list[float]

    def table(self) -> list[dict]:
        return [t.record(self.rungs) for t in self.trials]


def sample_configs(space: Mapping[str, Sequence], n: int, seed: int) -> list[dict]:
    """``n`` distinct grid points drawn uniformly without replacement."""
    names = list(space)
    sizes = [len(space[k]) for k in names]
    total = math.prod(sizes)
    if n > total:
        raise ValueError(f"{n} trials requested but the grid has only {total} points")
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=n, replace=False)
    return [{k: space[k][int(i)] for k, i in zip(names, np.unravel_index(f, sizes))} for f in flat]


def asha_search(cfg: AshaConfig, objective: Objective) -> AshaResult:
    rungs = cfg.rungs()
    top = len(rungs) - 1
    eta = cfg.reduction_factor
    configs = sample_configs(cfg.space, cfg.n_trials, cfg.seed)
    trials: list[Trial] = []
    done: dict[int, list[int]] = {k: [] for k in range(len(rungs))}  # rung -> completed trial ids
    promoted: dict[int, set[int]] = {k: set() for k in range(len(rungs))}
    events: list[tuple[float, int, int, int]] = []  # (finish time, seq, trial, rung)
    seq = itertools.count()
    clock = 0.0

    def next_job() -> tuple[int, int] | None:
        # floor quota while fresh trials remain, ceil once the pool is drained
        draining = len(trials) >= cfg.n_trials
        for k in reversed(range(top)):
            n_done = len(done[k])
            quota = math.ceil(n_done / eta) if draining else n_done // eta
            if len(promoted[k]) >= quota:
                continue
            ranked = sorted(done[k], key=lambda i: (-trials[i].scores[k], i))
            for i in ranked[:quota]:
                if i not in promoted[k]:
                    promoted[k].add(i)
                    return i, k + 1
        if len(trials) < cfg.n_trials:
            t = Trial(len(trials), configs[len(trials)])
            trials.append(t)
            return t.trial_id, 0
        return None

    def fill(busy: int) -> int:
        while busy < cfg.n_workers:
            job = next_job()
            if job is None:
                break
            i, k = job
            heapq.heappush(events, (clock + rungs[k], next(seq), i, k))
            busy += 1
        return busy

    busy = fill(0)
    while events:
        clock, _, i, k = heapq.heappop(events)
        busy -= 1
        trials[i].scores[k] = float(objective(dict(trials[i].config), rungs[k], i))
        done[k].append(i)
        busy = fill(busy)

    best_rung = max(t.rung for t in trials)
    finalists = [t for t in trials if t.rung == best_rung]
    best = min(finalists, key=lambda t: (-t.scores[best_rung], t.trial_id))
    return AshaResult(dict(best.config), best.scores[best_rung], best.trial_id, trials,
                      {k: len(v) for k, v in promoted.items() if k < top},
                      {k: len(v) for k, v in done.items()}, rungs)
