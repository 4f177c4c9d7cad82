"""JIT dispatch: numba kernels by default, pure-Python fallback on request.

Set COUPLED_TURBO_NO_NUMBA=1 to force the fallback path (it is also taken
automatically when numba is not installed). Both paths compute identical
results; the fallback is just slower, which the benchmark in
benchmarks/bench_kernels.py quantifies.
"""

import os

NUMBA_ENABLED = os.environ.get("COUPLED_TURBO_NO_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - environment without numba
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        """No-op stand-in for numba.njit."""
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


__all__ = ["njit", "NUMBA_ENABLED"]
