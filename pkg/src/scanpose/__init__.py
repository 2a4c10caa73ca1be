"""scanpose: single-scanline relative pose estimation for rolling-shutter
cameras from line/scanline intersections."""

from . import enumeration, geometry, robust, solvers, synthetic, tensors
from .exceptions import ScanposeError

__version__ = "0.1.0"

__all__ = [
    "enumeration",
    "geometry",
    "robust",
    "solvers",
    "synthetic",
    "tensors",
    "ScanposeError",
    "__version__",
]
