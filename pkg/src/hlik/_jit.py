"""Numba toggle shared by the hot kernels.

Compilation is on whenever numba imports cleanly; set ``HLIK_NUMBA=0`` in the
environment to force the pure-numpy fallback path (useful for debugging and
for the benchmark in benchmarks/bench_jit.py).
"""

import os


def _numba_enabled():
    flag = os.environ.get("HLIK_NUMBA", "").strip().lower()
    if flag in ("0", "off", "false", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _numba_enabled()

if NUMBA_ENABLED:
    from numba import njit
else:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap
