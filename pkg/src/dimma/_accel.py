"""Numba dispatch and the worker pool.

Set ``DIMMA_DISABLE_NUMBA=1`` to force the pure-numpy kernels. Both paths
are always importable so they can be compared against each other.
``DIMMA_NUM_WORKERS`` caps per-item parallelism (default 1, i.e. serial).
"""

import os
from concurrent.futures import ThreadPoolExecutor

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    numba = None
    HAVE_NUMBA = False


def _flag(name):
    return os.environ.get(name, "").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _flag("DIMMA_DISABLE_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching; identity decorator without numba."""
    direct = len(args) == 1 and callable(args[0])
    if not HAVE_NUMBA:
        return args[0] if direct else (lambda fn: fn)
    kwargs.setdefault("cache", True)
    if direct:
        return numba.njit(**kwargs)(args[0])
    return numba.njit(*args, **kwargs)


def pick(fast, slow):
    """Return the numba kernel when enabled, otherwise the numpy fallback."""
    return fast if USE_NUMBA else slow


def num_workers():
    try:
        return max(1, int(os.environ.get("DIMMA_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def pmap(fn, items):
    """``list(map(fn, items))`` on up to ``num_workers()`` threads; order is kept."""
    n = num_workers()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
