"""Backend selection for the gravity kernels.

The compiled extension is preferred; the NumPy twin is used when the
extension is missing or when ``TRIBODY_PURE`` is set to a non-empty value
other than ``0``.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("TRIBODY_PURE", "0") in ("", "0"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        pass

accelerations = _impl.accelerations
leapfrog = _impl.leapfrog
rk4 = _impl.rk4
midpoint = _impl.midpoint
bs_step = _impl.bs_step
bs_advance = _impl.bs_advance

__all__ = ["BACKEND", "accelerations", "leapfrog", "rk4", "midpoint", "bs_step", "bs_advance", "get_backend"]


def get_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
