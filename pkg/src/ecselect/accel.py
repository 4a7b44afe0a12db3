"""Optional numba acceleration for the hot inner loops.

Three kernels dominate runtime on realistic inputs: the VAR forward
simulator, the SMO sweep of the SVM trainer, and the per-frequency
variance assembly of the renormalized coupling statistic.  Each has a
pure-numpy implementation; when numba is importable and not disabled,
the loop-heavy ones are compiled with ``@njit``.

Set ``ECSELECT_NO_NUMBA=1`` to force the numpy path (useful for
debugging and for the benchmark in ``benchmarks/bench_accel.py``).
The selected path is fixed at import time.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    HAVE_NUMBA = False

NUMBA_DISABLED = os.environ.get("ECSELECT_NO_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
}

USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


def maybe_jit(func):
    """Compile ``func`` with numba when the accelerated path is active.

    Returns the function unchanged otherwise, so callers always get a
    plain callable with identical semantics.
    """
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    return func
