"""Fan-beam line-integral projector A and its exact algebraic adjoint.

Discretization: each source-to-detector-pixel segment is clipped against the
bilinear support of the image, then sampled at midpoints of m equal substeps
with m chosen so the substep never exceeds half the pixel spacing.  Samples
are bilinearly interpolated (pixels outside the grid contribute zero) and
summed times the substep length.  The backprojector scatters the identical
weights, so <Ax, y> == <x, A^T y> holds to float rounding.

Kernels are serial numba code: deterministic regardless of machine, and fast
enough for iterative reconstruction on a single core.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

with warnings.catch_warnings():
    # keep stderr clean for the CLI: the import probes threading layers we
    # never use (kernels below are serial) and may warn about their versions
    warnings.simplefilter("ignore")
    from numba import njit

from .core import FanBeamGeometry, ImageGrid, Sinogram, SinogramKind
from .errors import ArgumentError


@dataclass(frozen=True)
class Ray:
    """Source and detector-pixel-center endpoints of one measurement line."""

    source_point: tuple[float, float]
    detector_point: tuple[float, float]

    def __post_init__(self):
        if self.source_point == self.detector_point:
            raise ArgumentError("degenerate ray: source equals detector point")


def source_position(geometry: FanBeamGeometry, angle: float) -> tuple[float, float]:
    r = geometry.source_to_isocenter
    return (r * np.cos(angle), r * np.sin(angle))


def detector_positions(geometry: FanBeamGeometry) -> np.ndarray:
    """Detector pixel centers, shape (num_angles, detector_pixels, 2)."""
    ang = geometry.angles
    n = geometry.detector_pixels
    lateral = (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * geometry.detector_spacing
    cos, sin = np.cos(ang), np.sin(ang)
    # source + sdd * central_direction, central_direction = -(cos, sin)
    cx = (geometry.source_to_isocenter - geometry.source_to_detector) * cos
    cy = (geometry.source_to_isocenter - geometry.source_to_detector) * sin
    px = cx[:, None] + lateral[None, :] * (-sin[:, None])
    py = cy[:, None] + lateral[None, :] * cos[:, None]
    return np.stack([px, py], axis=-1)


def source_positions(geometry: FanBeamGeometry) -> np.ndarray:
    ang = geometry.angles
    r = geometry.source_to_isocenter
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)


def ray_for(geometry: FanBeamGeometry, angle_index: int, detector_index: int) -> Ray:
    if not 0 <= angle_index < geometry.num_angles:
        raise ArgumentError(f"angle_index {angle_index} out of range")
    if not 0 <= detector_index < geometry.detector_pixels:
        raise ArgumentError(f"detector_index {detector_index} out of range")
    src = source_positions(geometry)[angle_index]
    det = detector_positions(geometry)[angle_index, detector_index]
    return Ray(source_point=(src[0], src[1]), detector_point=(det[0], det[1]))


@njit(cache=True)
def _ray_setup(sx, sy, ex, ey, x0, x1, y0, y1, step_hint):
    """Clip segment (s -> e) against the rectangle; return sampling plan.

    Returns (ux, uy, tmin, step, m): unit direction, entry parameter, substep
    length, substep count.  m == 0 means the ray misses the support.
    """
    dx = ex - sx
    dy = ey - sy
    length = np.sqrt(dx * dx + dy * dy)
    if length == 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0
    ux = dx / length
    uy = dy / length
    tmin = 0.0
    tmax = length
    if ux != 0.0:
        ta = (x0 - sx) / ux
        tb = (x1 - sx) / ux
        if ta > tb:
            ta, tb = tb, ta
        if ta > tmin:
            tmin = ta
        if tb < tmax:
            tmax = tb
    elif sx < x0 or sx > x1:
        return ux, uy, 0.0, 0.0, 0
    if uy != 0.0:
        ta = (y0 - sy) / uy
        tb = (y1 - sy) / uy
        if ta > tb:
            ta, tb = tb, ta
        if ta > tmin:
            tmin = ta
        if tb < tmax:
            tmax = tb
    elif sy < y0 or sy > y1:
        return ux, uy, 0.0, 0.0, 0
    if tmax <= tmin:
        return ux, uy, 0.0, 0.0, 0
    span = tmax - tmin
    m = int(np.ceil(span / step_hint))
    if m < 1:
        m = 1
    return ux, uy, tmin, span / m, m


@njit(cache=True)
def _forward_kernel(img, ox, oy, h, src, det, step_hint, out):
    H, W = img.shape
    x0 = ox - h
    x1 = ox + W * h
    y0 = oy - h
    y1 = oy + H * h
    na, nd = out.shape
    for a in range(na):
        sx = src[a, 0]
        sy = src[a, 1]
        for k in range(nd):
            ux, uy, tmin, step, m = _ray_setup(
                sx, sy, det[a, k, 0], det[a, k, 1], x0, x1, y0, y1, step_hint
            )
            acc = 0.0
            for j in range(m):
                t = tmin + (j + 0.5) * step
                cx = (sx + t * ux - ox) / h
                cy = (sy + t * uy - oy) / h
                ix = int(np.floor(cx))
                iy = int(np.floor(cy))
                fx = cx - ix
                fy = cy - iy
                if 0 <= iy < H:
                    if 0 <= ix < W:
                        acc += img[iy, ix] * (1.0 - fx) * (1.0 - fy)
                    if 0 <= ix + 1 < W:
                        acc += img[iy, ix + 1] * fx * (1.0 - fy)
                if 0 <= iy + 1 < H:
                    if 0 <= ix < W:
                        acc += img[iy + 1, ix] * (1.0 - fx) * fy
                    if 0 <= ix + 1 < W:
                        acc += img[iy + 1, ix + 1] * fx * fy
            out[a, k] = acc * step


@njit(cache=True)
def _adjoint_kernel(sino, ox, oy, h, src, det, step_hint, img):
    H, W = img.shape
    x0 = ox - h
    x1 = ox + W * h
    y0 = oy - h
    y1 = oy + H * h
    na, nd = sino.shape
    for a in range(na):
        sx = src[a, 0]
        sy = src[a, 1]
        for k in range(nd):
            val = sino[a, k]
            if val == 0.0:
                continue
            ux, uy, tmin, step, m = _ray_setup(
                sx, sy, det[a, k, 0], det[a, k, 1], x0, x1, y0, y1, step_hint
            )
            contrib = val * step
            for j in range(m):
                t = tmin + (j + 0.5) * step
                cx = (sx + t * ux - ox) / h
                cy = (sy + t * uy - oy) / h
                ix = int(np.floor(cx))
                iy = int(np.floor(cy))
                fx = cx - ix
                fy = cy - iy
                if 0 <= iy < H:
                    if 0 <= ix < W:
                        img[iy, ix] += contrib * (1.0 - fx) * (1.0 - fy)
                    if 0 <= ix + 1 < W:
                        img[iy, ix + 1] += contrib * fx * (1.0 - fy)
                if 0 <= iy + 1 < H:
                    if 0 <= ix < W:
                        img[iy + 1, ix] += contrib * (1.0 - fx) * fy
                    if 0 <= ix + 1 < W:
                        img[iy + 1, ix + 1] += contrib * fx * fy


class Projector:
    """Reusable A / A^T pair for one geometry and one image grid layout.

    Precomputes source and detector coordinates once; `forward` and
    `adjoint` then work on raw float64 arrays, which is what the iterative
    solvers need in their inner loops.
    """

    def __init__(self, geometry: FanBeamGeometry, width: int, height: int,
                 spacing: float, origin: tuple[float, float]):
        self.geometry = geometry
        self.width = int(width)
        self.height = int(height)
        self.spacing = float(spacing)
        self.origin = (float(origin[0]), float(origin[1]))
        self._src = np.ascontiguousarray(source_positions(geometry))
        self._det = np.ascontiguousarray(detector_positions(geometry))
        self._step_hint = self.spacing / 2.0

    @classmethod
    def for_grid(cls, geometry: FanBeamGeometry, grid: ImageGrid) -> "Projector":
        return cls(geometry, grid.width, grid.height, grid.spacing, grid.origin)

    def forward(self, img: np.ndarray) -> np.ndarray:
        img = np.ascontiguousarray(img, dtype=np.float64)
        if img.shape != (self.height, self.width):
            raise ArgumentError(
                f"image shape {img.shape} does not match projector grid "
                f"({self.height}, {self.width})"
            )
        out = np.zeros((self.geometry.num_angles, self.geometry.detector_pixels), np.float64)
        _forward_kernel(img, self.origin[0], self.origin[1], self.spacing,
                        self._src, self._det, self._step_hint, out)
        return out

    def adjoint(self, sino: np.ndarray) -> np.ndarray:
        sino = np.ascontiguousarray(sino, dtype=np.float64)
        expected = (self.geometry.num_angles, self.geometry.detector_pixels)
        if sino.shape != expected:
            raise ArgumentError(f"sinogram shape {sino.shape} does not match {expected}")
        img = np.zeros((self.height, self.width), np.float64)
        _adjoint_kernel(sino, self.origin[0], self.origin[1], self.spacing,
                        self._src, self._det, self._step_hint, img)
        return img


def forward_project(image: ImageGrid, geometry: FanBeamGeometry) -> Sinogram:
    """Line integrals of `image` along every source/detector-pixel ray."""
    proj = Projector.for_grid(geometry, image)
    values = proj.forward(image.as_float64())
    return Sinogram(geometry=geometry, kind=SinogramKind.LINE_INTEGRAL,
                    values=values.astype(np.float32))


def back_project(sino: Sinogram, geometry: FanBeamGeometry, grid_spec: ImageGrid) -> ImageGrid:
    """Exact adjoint of forward_project onto the grid described by grid_spec.

    grid_spec supplies shape, spacing, and origin; its pixel values are
    ignored.
    """
    if sino.kind != SinogramKind.LINE_INTEGRAL:
        raise ArgumentError("back_project expects a line-integral sinogram")
    if not sino.geometry.matches(geometry):
        raise ArgumentError("sinogram geometry does not match argument geometry")
    proj = Projector.for_grid(geometry, grid_spec)
    values = proj.adjoint(sino.as_float64())
    return grid_spec.with_values(values.astype(np.float32))
