import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coldnilm import _pykernels as py
from coldnilm import kernels

cy = pytest.importorskip("coldnilm._kernels")

floats = st.floats(-1e3, 1e3, allow_nan=False, width=64)


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@given(arrays(np.float64, st.integers(2, 300), elements=floats), st.integers(2, 50))
def test_sliding_rms_identical(x, win):
    win = min(win, x.shape[0])
    a = cy.sliding_rms(x, win)
    b = py.sliding_rms(x, win)
    assert a.tobytes() == b.tobytes()


@given(arrays(np.uint8, st.integers(0, 200), elements=st.integers(0, 1)))
def test_longest_run_identical(mask):
    assert tuple(cy.longest_run(mask)) == tuple(py.longest_run(mask))


@given(arrays(np.float64, st.integers(1, 40), elements=floats),
       arrays(np.float64, st.integers(1, 120), elements=floats),
       st.integers(-200, 200), st.integers(1, 30))
def test_lag_correlation_identical(ref, v, start, n_lags):
    lags = np.arange(-(n_lags // 2), n_lags - n_lags // 2, dtype=np.int64)
    a = cy.lag_correlation(ref, v, start, lags)
    b = py.lag_correlation(ref, v, start, lags)
    assert a.tobytes() == b.tobytes()


@given(arrays(np.float64, st.integers(1, 100), elements=floats),
       st.integers(1, 150), st.integers(-150, 150), st.integers(-20, 20))
def test_add_shifted_identical(comp, width, offset, shift):
    base = np.linspace(-1, 1, width)
    a, b = base.copy(), base.copy()
    cy.add_shifted(a, comp, offset, shift)
    py.add_shifted(b, comp, offset, shift)
    assert a.tobytes() == b.tobytes()


def test_add_shifted_matches_loop_oracle():
    rng = np.random.default_rng(0)
    comp = rng.standard_normal(37)
    out = np.zeros(50)
    kernels.add_shifted(out, comp, -5, 3)
    expect = np.zeros(50)
    for n in range(50):
        j = n + 5
        if 0 <= j < 37:
            expect[n] = comp[(j + 3) % 37]
    np.testing.assert_array_equal(out, expect)


def test_longest_run_prefers_first_of_equal_runs():
    mask = np.array([1, 1, 0, 1, 1, 0, 1], dtype=np.uint8)
    assert tuple(kernels.longest_run(mask)) == (0, 2)
    assert tuple(kernels.longest_run(np.zeros(5, np.uint8))) == (0, 0)
