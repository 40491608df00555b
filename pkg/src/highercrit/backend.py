"""Kernel backend selection and thread-count plumbing.

The hot inner loops (banded Cholesky, banded triangular solves with many
right-hand sides, per-row refit solves) exist in two interchangeable
implementations: numba-compiled kernels and a NumPy/SciPy path. The numba
path is the default whenever numba imports cleanly; setting the environment
variable ``HIGHERCRIT_DISABLE_NUMBA=1`` forces the NumPy path. Both paths
stay importable so the benchmark suite can time them side by side.

``HIGHERCRIT_THREADS`` sets the worker count for Monte-Carlo repetition
pools (default 1). Results are merged in repetition order, so the thread
count never changes the numbers.
"""

from __future__ import annotations

import os

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay graceful
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() not in ("", "0", "false", "no")


def numba_enabled() -> bool:
    """True when the compiled kernels are active (env flag re-read per call)."""
    return HAVE_NUMBA and not _env_flag("HIGHERCRIT_DISABLE_NUMBA")


def num_threads() -> int:
    """Worker count for repetition pools, from HIGHERCRIT_THREADS (default 1)."""
    raw = os.environ.get("HIGHERCRIT_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)
