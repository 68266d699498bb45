"""Three-body gravitational simulation and learned forecasters.

Subpackages are imported lazily by callers; this module only exposes the
version and which kernel backend was selected at import.
"""

from ._version import __version__
from .kernels import BACKEND

__all__ = ["__version__", "BACKEND"]
