"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the numpy twin in
``_pykernels`` takes over. Set ``COLDNILM_PURE_PYTHON=1`` to force the
fallback (useful for benchmarking and for checking that both agree).
"""

import os

from . import _pykernels

if os.environ.get("COLDNILM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

sliding_rms = _impl.sliding_rms
longest_run = _impl.longest_run
lag_correlation = _impl.lag_correlation
add_shifted = _impl.add_shifted

__all__ = ["BACKEND", "sliding_rms", "longest_run", "lag_correlation", "add_shifted"]
