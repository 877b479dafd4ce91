"""Numba/NumPy backend selection for the hot numerical kernels.

The sampler kernels are written once in numba-compatible style. By default
they are JIT compiled with ``numba.njit(cache=True, nogil=True)``; setting
the environment variable ``IMPACTOR_NUMBA=0`` (or numba being unavailable)
runs the same code as plain Python/NumPy. The fallback is functionally
identical but 1-2 orders of magnitude slower; see benchmarks/.
"""

import os

_flag = os.environ.get("IMPACTOR_NUMBA", "").strip().lower()

if _flag in ("0", "false", "off", "no"):
    NUMBA_ENABLED = False
elif _flag in ("1", "true", "on", "yes"):
    import numba  # noqa: F401  -- fail loudly if explicitly requested

    NUMBA_ENABLED = True
else:
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def jit_kernel(func=None, **kwargs):
    """``numba.njit`` when the numba backend is active, identity otherwise.

    Kernels compiled with this decorator release the GIL, so entity-level
    thread pools achieve real parallelism on the numba backend.
    """
    if NUMBA_ENABLED:
        from numba import njit

        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        if func is None:
            return njit(**kwargs)
        return njit(**kwargs)(func)
    if func is None:
        return lambda f: f
    return func


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
