"""JIT backend selection for the hot numeric kernels.

Every kernel module decorates its functions with the ``njit`` exported here.
By default that is numba's ``njit`` and the loops run compiled. Setting the
environment variable ``MLSQC_DISABLE_NUMBA=1`` (or having no numba installed)
swaps in a no-op decorator so the identical source runs as plain
NumPy/Python. The compiled wrapper keeps numba's ``.py_func`` attribute and
the no-op wrapper mirrors it, so callers and benchmarks can always reach the
pure-Python path via ``kernel.py_func``.
"""

import os

_flag = os.environ.get("MLSQC_DISABLE_NUMBA", "").strip().lower()
_disabled = _flag in ("1", "true", "yes", "on")

if not _disabled:
    try:
        from numba import njit
        NUMBA_ENABLED = True
    except ImportError:
        _disabled = True

if _disabled:
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):
        def wrap(func):
            func.py_func = func
            return func

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return wrap(args[0])
        return wrap


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
