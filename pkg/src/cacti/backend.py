"""Kernel backend selection: numba JIT vs pure NumPy.

Hot inner loops (mask construction, optimizer updates, the Wasserstein
merge) ship in two flavors: a numba ``@njit`` build and a NumPy build.
``CACTI_BACKEND`` picks the path:

    auto   (default) use numba when importable, else NumPy
    numba  require numba, fail if missing
    numpy  force the NumPy path even when numba is installed

``benchmarks/bench_kernels.py`` compares the two paths head to head.
"""

from __future__ import annotations

import os

_choice = os.environ.get("CACTI_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"CACTI_BACKEND must be one of auto/numba/numpy, got {_choice!r}")

HAS_NUMBA = False
if _choice != "numpy":
    try:
        from numba import njit  # noqa: F401
        HAS_NUMBA = True
    except ImportError:
        if _choice == "numba":
            raise ImportError(
                "CACTI_BACKEND=numba but numba is not installed; "
                "pip install numba or unset CACTI_BACKEND")

if not HAS_NUMBA:
    def njit(*args, **kwargs):  # type: ignore[misc]
        """No-op stand-in so kernel modules import cleanly without numba."""
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn
        return wrap


def use_numba() -> bool:
    """True when dispatched kernels run their numba builds."""
    return HAS_NUMBA
