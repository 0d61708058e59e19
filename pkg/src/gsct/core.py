"""Domain types shared by every stage: images, geometry, sinograms, spectra.

Conventions
-----------
* Physical coordinates are millimetres, attenuation is mm^-1, energies keV.
* The isocenter is the coordinate origin.  An ImageGrid stores the position
  of the center of pixel (row 0, col 0) in `origin`; pixel (r, c) has its
  center at (origin_x + c * spacing, origin_y + r * spacing).  x maps to
  columns, y maps to rows.
* Pixel values are stored as float32, matching the on-disk formats exactly
  so that write -> read round-trips are bit-for-bit.  Numerical routines
  promote to float64 internally and cast back on output.
* All types are immutable after construction (arrays are marked read-only),
  so instances are safe to share across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError


def _frozen_array(values, dtype, name: str) -> np.ndarray:
    arr = np.array(values, dtype=dtype, order="C", copy=True)
    if not np.isfinite(arr).all():
        raise ArgumentError(f"{name} contains non-finite values", tag="ARG_NON_FINITE")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """2D scalar field with isotropic pixel spacing and a physical origin."""

    width: int
    height: int
    spacing: float
    origin: tuple[float, float]
    values: np.ndarray  # shape (height, width), float32, read-only

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ArgumentError("ImageGrid dimensions must be >= 1")
        if not (self.spacing > 0):
            raise ArgumentError("ImageGrid spacing must be > 0")
        ox, oy = self.origin
        if not (math.isfinite(ox) and math.isfinite(oy)):
            raise ArgumentError("ImageGrid origin must be finite")
        object.__setattr__(self, "origin", (float(ox), float(oy)))
        arr = _frozen_array(self.values, np.float32, "ImageGrid values")
        if arr.shape != (self.height, self.width):
            if arr.size != self.width * self.height:
                raise ArgumentError(
                    f"ImageGrid values size {arr.size} != {self.width}x{self.height}"
                )
            arr = arr.reshape(self.height, self.width).copy()
            arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @staticmethod
    def centered_origin(width: int, height: int, spacing: float) -> tuple[float, float]:
        return (-(width - 1) / 2.0 * spacing, -(height - 1) / 2.0 * spacing)

    @classmethod
    def from_array(cls, values, spacing: float, origin: tuple[float, float] | None = None) -> "ImageGrid":
        arr = np.asarray(values)
        if arr.ndim != 2:
            raise ArgumentError("from_array expects a 2D array")
        h, w = arr.shape
        if origin is None:
            origin = cls.centered_origin(w, h, spacing)
        return cls(width=w, height=h, spacing=spacing, origin=origin, values=arr)

    @classmethod
    def zeros(cls, width: int, height: int, spacing: float, origin: tuple[float, float] | None = None) -> "ImageGrid":
        if origin is None:
            origin = cls.centered_origin(width, height, spacing)
        return cls(width, height, spacing, origin, np.zeros((height, width), np.float32))

    def with_values(self, values) -> "ImageGrid":
        return ImageGrid(self.width, self.height, self.spacing, self.origin, values)

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) coordinate arrays of shape (height, width), in mm."""
        ox, oy = self.origin
        x = ox + self.spacing * np.arange(self.width, dtype=np.float64)
        y = oy + self.spacing * np.arange(self.height, dtype=np.float64)
        return np.meshgrid(x, y)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageGrid):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.spacing == other.spacing
            and self.origin == other.origin
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class FanBeamGeometry:
    """Point source plus flat equispaced detector rotating about the isocenter.

    At angle theta the source sits at source_to_isocenter * (cos, sin)(theta);
    the detector line is perpendicular to the central ray at distance
    source_to_detector from the source, with pixels spaced detector_spacing
    along the axis (-sin, cos)(theta) and centered on the central ray.
    """

    source_to_isocenter: float
    source_to_detector: float
    detector_pixels: int
    detector_spacing: float
    angles: np.ndarray  # radians, strictly increasing, in [0, 2*pi)

    def __post_init__(self):
        if not (self.source_to_detector > self.source_to_isocenter > 0):
            raise ArgumentError("need source_to_detector > source_to_isocenter > 0")
        if self.detector_pixels < 1:
            raise ArgumentError("detector_pixels must be >= 1")
        if not (self.detector_spacing > 0):
            raise ArgumentError("detector_spacing must be > 0")
        ang = _frozen_array(self.angles, np.float64, "angles")
        if ang.ndim != 1 or ang.size == 0:
            raise ArgumentError("angles must be a non-empty 1D sequence")
        if np.any(np.diff(ang) <= 0):
            raise ArgumentError("angles must be strictly increasing")
        if ang[0] < 0 or ang[-1] >= 2 * math.pi:
            raise ArgumentError("angles must lie in [0, 2*pi)")
        object.__setattr__(self, "angles", ang)

    @classmethod
    def full_scan(
        cls,
        source_to_isocenter: float,
        source_to_detector: float,
        detector_pixels: int,
        detector_spacing: float,
        num_angles: int,
    ) -> "FanBeamGeometry":
        angles = 2 * math.pi * np.arange(num_angles, dtype=np.float64) / num_angles
        return cls(source_to_isocenter, source_to_detector, detector_pixels, detector_spacing, angles)

    @property
    def num_angles(self) -> int:
        return int(self.angles.size)

    def matches(self, other: "FanBeamGeometry") -> bool:
        return (
            self.source_to_isocenter == other.source_to_isocenter
            and self.source_to_detector == other.source_to_detector
            and self.detector_pixels == other.detector_pixels
            and self.detector_spacing == other.detector_spacing
            and np.array_equal(self.angles, other.angles)
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, FanBeamGeometry):
            return NotImplemented
        return self.matches(other)


class SinogramKind(enum.IntEnum):
    LINE_INTEGRAL = 0
    INTENSITY = 1


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Per-angle, per-detector-pixel measurements tied to a geometry."""

    geometry: FanBeamGeometry
    kind: SinogramKind
    values: np.ndarray  # shape (num_angles, detector_pixels), float32, read-only

    def __post_init__(self):
        kind = SinogramKind(self.kind)
        object.__setattr__(self, "kind", kind)
        arr = _frozen_array(self.values, np.float32, "Sinogram values")
        expected = (self.geometry.num_angles, self.geometry.detector_pixels)
        if arr.shape != expected:
            if arr.size != expected[0] * expected[1]:
                raise ArgumentError(
                    f"Sinogram values size {arr.size} != angles x pixels {expected}"
                )
            arr = arr.reshape(expected).copy()
            arr.flags.writeable = False
        if kind == SinogramKind.INTENSITY and arr.size and arr.min() < 0:
            raise ArgumentError("Intensity sinogram must be non-negative")
        object.__setattr__(self, "values", arr)

    def with_values(self, values, kind: SinogramKind | None = None) -> "Sinogram":
        return Sinogram(self.geometry, self.kind if kind is None else kind, values)

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sinogram):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.geometry.matches(other.geometry)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Energy-binned effective fluence per ray (detector response folded in)."""

    energies: np.ndarray  # keV bin centers, strictly increasing
    weights: np.ndarray  # expected photons per unattenuated ray, >= 0

    def __post_init__(self):
        e = _frozen_array(self.energies, np.float64, "Spectrum energies")
        w = _frozen_array(self.weights, np.float64, "Spectrum weights")
        if e.ndim != 1 or w.ndim != 1 or e.shape != w.shape or e.size == 0:
            raise ArgumentError("Spectrum energies/weights must be matching 1D arrays")
        if np.any(np.diff(e) <= 0):
            raise ArgumentError("Spectrum energies must be strictly increasing")
        if w.min() < 0:
            raise ArgumentError("Spectrum weights must be non-negative")
        if w.max() <= 0:
            raise ArgumentError("Spectrum needs at least one positive weight")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "weights", w)

    @property
    def num_bins(self) -> int:
        return int(self.energies.size)

    def total_fluence(self) -> float:
        return float(self.weights.sum())

    def mean_energy(self) -> float:
        total = self.weights.sum()
        if total <= 0:
            raise ArgumentError("Spectrum has zero total weight")
        return float((self.weights * self.energies).sum() / total)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Spectrum):
            return NotImplemented
        return np.array_equal(self.energies, other.energies) and np.array_equal(
            self.weights, other.weights
        )


@dataclass(frozen=True, eq=False)
class MaterialTable:
    """Named attenuation curves mu_m(E) sampled on a fixed energy grid.

    Index 0 is reserved for air; its curve must lie at or below every other
    material's curve at every energy.
    """

    names: tuple[str, ...]
    energies: np.ndarray  # keV, strictly increasing
    curves: np.ndarray  # shape (num_materials, num_bins), mm^-1, >= 0

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if len(names) < 1:
            raise ArgumentError("MaterialTable needs at least the air entry")
        if len(set(names)) != len(names):
            raise ArgumentError("MaterialTable names must be unique")
        e = _frozen_array(self.energies, np.float64, "MaterialTable energies")
        if e.ndim != 1 or e.size == 0 or np.any(np.diff(e) <= 0):
            raise ArgumentError("MaterialTable energies must be strictly increasing")
        c = _frozen_array(self.curves, np.float64, "MaterialTable curves")
        if c.shape != (len(names), e.size):
            raise ArgumentError(
                f"MaterialTable curves shape {c.shape} != (num_materials, num_bins)"
            )
        if c.min() < 0:
            raise ArgumentError("Attenuation curves must be non-negative")
        if np.any(c[0] > c.min(axis=0) + 1e-15):
            raise ArgumentError("air (index 0) must not exceed any material curve")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "curves", c)

    @property
    def num_materials(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ArgumentError(f"unknown material {name!r}") from None

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaterialTable):
            return NotImplemented
        return (
            self.names == other.names
            and np.array_equal(self.energies, other.energies)
            and np.array_equal(self.curves, other.curves)
        )
