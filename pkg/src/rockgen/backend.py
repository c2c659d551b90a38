"""Kernel backend selection.

Hot numeric kernels (lattice Boltzmann stepping, flood fill) ship in two
variants: a numba-jitted one and a pure-numpy fallback.  The active backend
is chosen once per call site via :func:`use_numba`:

* ``ROCKGEN_BACKEND=numpy``  force the pure-numpy path
* ``ROCKGEN_BACKEND=numba``  force numba (ImportError if unavailable)
* unset / ``auto``           numba when importable, numpy otherwise

``benchmarks/bench_kernels.py`` compares the two paths.
"""

import os

try:
    import numba  # noqa: F401

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    _HAVE_NUMBA = False


def backend_name() -> str:
    mode = os.environ.get("ROCKGEN_BACKEND", "auto").lower()
    if mode not in ("auto", "numba", "numpy"):
        raise ValueError(f"ROCKGEN_BACKEND must be auto|numba|numpy, got {mode!r}")
    if mode == "numba" and not _HAVE_NUMBA:
        raise ImportError("ROCKGEN_BACKEND=numba but numba is not installed")
    if mode == "auto":
        return "numba" if _HAVE_NUMBA else "numpy"
    return mode


def use_numba() -> bool:
    return backend_name() == "numba"
