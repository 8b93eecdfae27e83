"""Backend selection for the compiled kernels.

Set ``PATCHFORGE_NUMBA=0`` to force the pure-numpy path. When numba cannot be
imported the numpy path is used regardless of the flag.
"""

import os

_FALSEY = {"0", "false", "no", "off"}

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False

NUMBA_REQUESTED = os.environ.get("PATCHFORGE_NUMBA", "1").strip().lower() not in _FALSEY
USE_NUMBA = HAVE_NUMBA and NUMBA_REQUESTED


def worker_count(default: int = 4) -> int:
    """Thread cap from ``PATCHFORGE_THREADS`` (minimum 1)."""
    raw = os.environ.get("PATCHFORGE_THREADS")
    if not raw:
        return max(1, min(default, os.cpu_count() or 1))
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
