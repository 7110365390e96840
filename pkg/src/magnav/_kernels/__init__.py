"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import from ``MAGNAV_BACKEND``:

* ``numba`` (default): compiled kernels, falls back to numpy if numba is
  not importable.
* ``numpy``: vectorized reference implementation only.

Both implementations stay importable as ``numpy_impl`` / ``numba_impl`` so
tests and benchmarks can compare them directly.
"""
import logging
import os

from . import _numpy as numpy_impl

log = logging.getLogger(__name__)

ENV_FLAG = "MAGNAV_BACKEND"

# prefer OpenMP; the system TBB is often too old and numba warns on probing it
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp tbb workqueue")

try:
    from . import _numba as numba_impl
except ImportError:  # pragma: no cover - numba missing
    numba_impl = None


def _select():
    want = os.environ.get(ENV_FLAG, "numba").strip().lower()
    if want not in ("numba", "numpy"):
        raise ValueError(f"{ENV_FLAG} must be 'numba' or 'numpy', got {want!r}")
    if want == "numba" and numba_impl is None:
        log.warning("numba unavailable, using numpy kernels")
        want = "numpy"
    return want, (numba_impl if want == "numba" else numpy_impl)


BACKEND, _impl = _select()

dipole_field = _impl.dipole_field
fd_blocks = _impl.fd_blocks
cd_blocks = _impl.cd_blocks
slip_blocks = _impl.slip_blocks
abs_diff_matrix = _impl.abs_diff_matrix
local_minima = _impl.local_minima

__all__ = [
    "BACKEND",
    "ENV_FLAG",
    "numpy_impl",
    "numba_impl",
    "dipole_field",
    "fd_blocks",
    "cd_blocks",
    "slip_blocks",
    "abs_diff_matrix",
    "local_minima",
]
