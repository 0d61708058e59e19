"""Fan-beam CT workbench with a gradient-step plug-and-play reconstructor."""

__version__ = "0.1.0"

from .core import (
    FanBeamGeometry,
    ImageGrid,
    MaterialTable,
    Sinogram,
    SinogramKind,
    Spectrum,
)
from .errors import ArgumentError, FormatError, GsctError, IoError, NumericalError

__all__ = [
    "ArgumentError",
    "FanBeamGeometry",
    "FormatError",
    "GsctError",
    "ImageGrid",
    "IoError",
    "MaterialTable",
    "NumericalError",
    "Sinogram",
    "SinogramKind",
    "Spectrum",
    "__version__",
]
