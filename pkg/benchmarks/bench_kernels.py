"""Time the compiled kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on inputs sized like the desk pipeline (8 kHz recordings,
1 kHz one-second windows). A final row times rendering a small synthetic
dataset end to end, once per backend, in fresh interpreters.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from coldnilm import _pykernels

try:
    from coldnilm import _kernels
except ImportError:
    _kernels = None

SYNTH_SNIPPET = """
import time
from coldnilm import kernels, sns, toy
from coldnilm.signal import NormalizationConfig, normalize_signature
pats = {}
for raw in toy.generate_corpus(toy.desk_specs(), 6, 4000, seed=3):
    s = normalize_signature(raw, NormalizationConfig(f_down=1000))
    pats.setdefault(s.label, []).append(s)
sched = sns.SynthesisSchedule((sns.ScheduleEntry(1, 8), sns.ScheduleEntry(2, 28, 336),
                               sns.ScheduleEntry(3, 56, 672)), t_obs=1.0)
t0 = time.perf_counter()
n = sum(1 for _ in sns.synthesize_collection(pats, sched, sorted(pats), 1000.0))
print(kernels.BACKEND, n, time.perf_counter() - t0)
"""


def cases():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(8000 * 4)
    mask = (np.abs(np.sin(np.arange(x.size) / 900.0)) > 0.3).astype(np.uint8)
    ref = rng.standard_normal(20)
    v = rng.standard_normal(3000)
    lags = np.arange(-20, 21, dtype=np.int64)
    comp = rng.standard_normal(3000)
    out = np.zeros(1000)
    return {
        "sliding_rms (32000, win 160)": lambda k: k.sliding_rms(x, 160),
        "longest_run (32000)": lambda k: k.longest_run(mask),
        "lag_correlation (20 x 41 lags)": lambda k: k.lag_correlation(ref, v, 500, lags),
        "add_shifted (3000 -> 1000)": lambda k: k.add_shifted(out, comp, -700, 13),
    }


def best_of(fn, repeat: int) -> float:
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def synth_time(pure: bool) -> tuple[str, float]:
    env = dict(os.environ, COLDNILM_PURE_PYTHON="1" if pure else "0")
    res = subprocess.run([sys.executable, "-c", SYNTH_SNIPPET], env=env, capture_output=True, text=True, check=True)
    backend, n, secs = res.stdout.split()
    return f"{backend} ({n} examples)", float(secs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-synthesis", action="store_true", help="skip the end-to-end row")
    args = ap.parse_args()

    if _kernels is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'kernel':<34} {'numpy':>11} {'cython':>11} {'speedup':>8}")
    for name, fn in cases().items():
        t_py = best_of(lambda: fn(_pykernels), args.repeat)
        if _kernels is None:
            print(f"{name:<34} {t_py * 1e6:>9.1f}us {'-':>11} {'-':>8}")
            continue
        t_cy = best_of(lambda: fn(_kernels), args.repeat)
        print(f"{name:<34} {t_py * 1e6:>9.1f}us {t_cy * 1e6:>9.1f}us {t_py / t_cy:>7.1f}x")

    if not args.no_synthesis:
        label_py, t_py = synth_time(pure=True)
        label_cy, t_cy = synth_time(pure=False)
        print(f"\nrender desk dataset: {label_py} {t_py:.2f} s, {label_cy} {t_cy:.2f} s, "
              f"{t_py / t_cy:.1f}x")


if __name__ == "__main__":
    main()
