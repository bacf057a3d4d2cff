"""Backend selection for the numeric hot kernels.

The env flag SWIFTER_KERNELS picks the implementation once at import:

    auto   - numba if it imports, else numpy (default)
    numba  - require the jit kernels, fail loudly if numba is missing
    numpy  - force the pure-numpy fallback

Both twins stay importable (``kernels.numpy_impl`` / ``kernels.numba_impl``)
so tests and ``benchmarks/kernel_bench.py`` can compare them directly.
"""

import os

from . import numpy_impl

_CHOICE = os.environ.get("SWIFTER_KERNELS", "auto").lower()

if _CHOICE not in ("auto", "numba", "numpy"):
    raise ValueError(f"SWIFTER_KERNELS must be auto|numba|numpy, got {_CHOICE!r}")

if _CHOICE == "numpy":
    _impl = numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import numba_impl

        _impl = numba_impl
        BACKEND = "numba"
    except ImportError:
        if _CHOICE == "numba":
            raise
        _impl = numpy_impl
        BACKEND = "numpy"

fft_batch = _impl.fft_batch
retention_parallel_core = _impl.retention_parallel_core
retention_recurrent_run = _impl.retention_recurrent_run


def backend_name() -> str:
    return BACKEND
