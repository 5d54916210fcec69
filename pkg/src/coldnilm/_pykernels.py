"""numpy implementations of the compiled kernels (see ``_kernels.pyx``)."""

import numpy as np


def sliding_rms(x, win):
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        return np.empty(0)
    win = min(int(win), n)
    c = np.empty(n + 1)
    c[0] = 0.0
    np.cumsum(x * x, out=c[1:])
    last = n - win
    ms = (c[win:] - c[: last + 1]) / win
    np.maximum(ms, 0.0, out=ms)
    out = np.empty(n)
    out[: last + 1] = np.sqrt(ms)
    out[last + 1:] = out[last]
    return out


def longest_run(mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0, 0
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    starts, stops = edges[::2], edges[1::2]
    k = int(np.argmax(stops - starts))
    return int(starts[k]), int(stops[k])


def lag_correlation(ref, v, start, lags):
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    lags = np.asarray(lags, dtype=np.int64)
    length = v.shape[0]
    acc = np.zeros(lags.shape[0])
    # accumulate over n in order so the sums match the compiled loop exactly
    for n in range(ref.shape[0]):
        acc = acc + ref[n] * v[(n + lags - start) % length]
    return acc


def add_shifted(out, comp, offset, shift):
    width = out.shape[0]
    length = comp.shape[0]
    a = max(offset, 0)
    b = min(offset + length, width)
    if b <= a:
        return
    idx = (np.arange(a, b) - offset + shift) % length
    out[a:b] = out[a:b] + comp[idx]
