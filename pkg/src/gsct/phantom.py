"""Procedural 2D anatomical material maps and training-patch extraction.

Each region style composes layered analytic shapes (ellipses, rings, arc
bands) into a material-index field: outer air, a soft-tissue body contour,
randomized bone structures, and internal air cavities.  Structure sizes are
drawn as fractions of the field of view, so the same statistics hold at
full scale (2092 px at 0.14 mm, where they correspond to millimetre-scale
dental features) and at desk scale.  All draws come from one seeded
substream in a fixed order, so a spec maps to exactly one phantom.

Jaw-style maps always contain a mandible-like bone arc with enamel teeth on
top of the soft body, so they exercise every embedded material class except
where random placement adds more.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .errors import ArgumentError
from .materials import AIR, BONE, CARTILAGE, ENAMEL, MUSCLE, SOFT_TISSUE, build_material_table
from .physics import MaterialMap, spectrum_bin_centers


class Region(enum.Enum):
    HEAD = "head"
    JAW = "jaw"
    TORSO = "torso"


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    size: int = 2092
    spacing: float = 0.14
    region: Region = Region.JAW

    def __post_init__(self):
        if self.size < 64:
            raise ArgumentError("phantom size must be >= 64 pixels")
        if not (self.spacing > 0):
            raise ArgumentError("phantom spacing must be > 0")
        object.__setattr__(self, "region", Region(self.region))


@dataclass(frozen=True)
class PatchCriteria:
    patch_size: int = 888
    min_non_air_fraction: float = 0.20
    min_air_fraction: float = 0.10

    def __post_init__(self):
        if self.patch_size < 1:
            raise ArgumentError("patch_size must be >= 1")
        for name in ("min_non_air_fraction", "min_air_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ArgumentError(f"{name} must lie in [0, 1]")
        if self.min_non_air_fraction + self.min_air_fraction > 1.0:
            raise ArgumentError("fraction minimums must sum to at most 1")


def _ellipse(X, Y, cx, cy, a, b, phi=0.0):
    dx = X - cx
    dy = Y - cy
    c, s = math.cos(phi), math.sin(phi)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _paint_jaw(idx, X, Y, F, gen):
    cx = gen.uniform(-0.03, 0.03) * F
    cy = gen.uniform(-0.10, 0.00) * F
    a = gen.uniform(0.58, 0.70) * F
    b = gen.uniform(0.52, 0.64) * F
    phi = gen.uniform(-0.12, 0.12)
    body = _ellipse(X, Y, cx, cy, a, b, phi)
    idx[body] = SOFT_TISSUE

    for side in (-1.0, 1.0):
        mx = cx + side * gen.uniform(0.36, 0.46) * F
        my = cy + gen.uniform(-0.05, 0.10) * F
        m = _ellipse(X, Y, mx, my, gen.uniform(0.09, 0.15) * F,
                     gen.uniform(0.15, 0.23) * F, side * gen.uniform(0.15, 0.45))
        idx[m & body] = MUSCLE

    cavity = _ellipse(X, Y, cx + gen.uniform(-0.02, 0.02) * F,
                      cy + gen.uniform(0.04, 0.12) * F,
                      gen.uniform(0.13, 0.19) * F, gen.uniform(0.08, 0.13) * F)
    idx[cavity & body] = AIR

    # mandible: circular arc band with the top wedge removed (U opens upward)
    mcx = cx + gen.uniform(-0.02, 0.02) * F
    mcy = cy + gen.uniform(0.00, 0.06) * F
    r_arc = gen.uniform(0.30, 0.40) * F
    w_arc = gen.uniform(0.020, 0.050) * F
    dist = np.hypot(X - mcx, Y - mcy)
    psi = np.arctan2(Y - mcy, X - mcx)
    arc = (np.abs(dist - r_arc) <= w_arc / 2) & (np.sin(psi) <= 0.35)
    idx[arc & body] = BONE

    n_teeth = int(gen.integers(6, 11))
    span = gen.uniform(0.95, 1.25)
    for i in range(n_teeth):
        frac = i / (n_teeth - 1) - 0.5 if n_teeth > 1 else 0.0
        ang = -math.pi / 2 + 2.0 * span * frac
        tr = gen.uniform(0.020, 0.040) * F
        tooth = _ellipse(X, Y, mcx + r_arc * math.cos(ang), mcy + r_arc * math.sin(ang),
                         tr, tr * gen.uniform(1.2, 1.6), ang + math.pi / 2)
        idx[tooth & body] = ENAMEL

    spx = cx + gen.uniform(-0.02, 0.02) * F
    spy = cy - gen.uniform(0.30, 0.40) * F
    spine = _ellipse(X, Y, spx, spy, gen.uniform(0.05, 0.08) * F, gen.uniform(0.05, 0.08) * F)
    idx[spine & body] = BONE
    for side in (-1.0, 1.0):
        cart = _ellipse(X, Y, spx + side * gen.uniform(0.10, 0.15) * F,
                        spy + gen.uniform(0.00, 0.05) * F,
                        gen.uniform(0.025, 0.045) * F, gen.uniform(0.025, 0.045) * F)
        idx[cart & body] = CARTILAGE


def _paint_head(idx, X, Y, F, gen):
    cx = gen.uniform(-0.02, 0.02) * F
    cy = gen.uniform(-0.04, 0.04) * F
    a = gen.uniform(0.58, 0.68) * F
    b = gen.uniform(0.64, 0.76) * F
    body = _ellipse(X, Y, cx, cy, a, b)
    idx[body] = SOFT_TISSUE

    sa = a - gen.uniform(0.05, 0.09) * F
    sb = b - gen.uniform(0.05, 0.09) * F
    w = gen.uniform(0.035, 0.060) * F
    skull = _ellipse(X, Y, cx, cy, sa, sb) & ~_ellipse(X, Y, cx, cy, sa - w, sb - w)
    idx[skull & body] = BONE

    inner = _ellipse(X, Y, cx, cy, sa - w, sb - w)
    for _ in range(int(gen.integers(1, 4))):
        sx = cx + gen.uniform(-0.15, 0.15) * F
        sy = cy + gen.uniform(0.25, 0.45) * F
        sinus = _ellipse(X, Y, sx, sy, gen.uniform(0.03, 0.07) * F,
                         gen.uniform(0.03, 0.06) * F, gen.uniform(-0.5, 0.5))
        idx[sinus & inner] = AIR
    for side in (-1.0, 1.0):
        m = _ellipse(X, Y, cx + side * gen.uniform(0.25, 0.35) * F,
                     cy + gen.uniform(-0.15, 0.05) * F,
                     gen.uniform(0.06, 0.10) * F, gen.uniform(0.10, 0.16) * F,
                     side * gen.uniform(0.1, 0.4))
        idx[m & inner] = MUSCLE
    cart = _ellipse(X, Y, cx, cy + gen.uniform(0.45, 0.55) * F,
                    gen.uniform(0.025, 0.045) * F, gen.uniform(0.04, 0.07) * F)
    idx[cart & body] = CARTILAGE


def _paint_torso(idx, X, Y, F, gen):
    cx = gen.uniform(-0.02, 0.02) * F
    cy = gen.uniform(-0.04, 0.04) * F
    a = gen.uniform(0.72, 0.82) * F
    b = gen.uniform(0.52, 0.62) * F
    body = _ellipse(X, Y, cx, cy, a, b)
    idx[body] = SOFT_TISSUE

    w = gen.uniform(0.04, 0.07) * F
    band = body & ~_ellipse(X, Y, cx, cy, a - w, b - w)
    idx[band] = MUSCLE

    for side in (-1.0, 1.0):
        lung = _ellipse(X, Y, cx + side * gen.uniform(0.28, 0.38) * F,
                        cy + gen.uniform(0.02, 0.12) * F,
                        gen.uniform(0.14, 0.20) * F, gen.uniform(0.20, 0.28) * F,
                        side * gen.uniform(-0.2, 0.2))
        idx[lung & body] = AIR

    spy = cy - gen.uniform(0.28, 0.38) * F
    spine = _ellipse(X, Y, cx, spy, gen.uniform(0.06, 0.09) * F, gen.uniform(0.06, 0.09) * F)
    idx[spine & body] = BONE
    cart = _ellipse(X, Y, cx, spy + gen.uniform(0.11, 0.15) * F,
                    gen.uniform(0.03, 0.05) * F, gen.uniform(0.03, 0.05) * F)
    idx[cart & body] = CARTILAGE

    rcx, rcy = cx, cy - 0.05 * F
    r_rib = gen.uniform(0.52, 0.60) * F
    w_rib = gen.uniform(0.015, 0.025) * F
    dist = np.hypot(X - rcx, Y - rcy)
    psi = np.arctan2(Y - rcy, X - rcx)
    for lo, hi in ((0.4, 1.0), (2.1, 2.7), (-1.0, -0.4), (-2.7, -2.1)):
        rib = (np.abs(dist - r_rib) <= w_rib / 2) & (psi >= lo) & (psi <= hi)
        idx[rib & body] = BONE


_PAINTERS = {
    Region.JAW: _paint_jaw,
    Region.HEAD: _paint_head,
    Region.TORSO: _paint_torso,
}


def generate_phantom(spec: PhantomSpec) -> MaterialMap:
    """Deterministic material map for the given spec.

    The body contour always stays inside a 10% margin of the smaller grid
    half-extent, so border pixels (and in particular the corners) are air.
    """
    gen = _rng.generator(spec.seed, "phantom", spec.region.value)
    n = spec.size
    h = spec.spacing
    origin = (-(n - 1) / 2.0 * h, -(n - 1) / 2.0 * h)
    coords = origin[0] + h * np.arange(n, dtype=np.float64)
    X, Y = np.meshgrid(coords, coords)
    F = n * h / 2.0
    idx = np.zeros((n, n), np.uint8)
    _PAINTERS[spec.region](idx, X, Y, F, gen)
    table = build_material_table(spectrum_bin_centers())
    return MaterialMap(indices=idx, spacing=h, origin=origin, table=table)


def extract_patches(material_map: MaterialMap, criteria: PatchCriteria,
                    stride: int | None = None) -> list[tuple[tuple[int, int], MaterialMap]]:
    """Sliding-window patches passing both composition criteria.

    Windows are visited row-major at the given stride (default half the
    patch size); a window is kept when its non-air pixel fraction is at
    least min_non_air_fraction and its air fraction at least
    min_air_fraction, both by exact pixel counting.  Each entry is
    ((row, col) window origin in parent pixels, patch map in the parent
    coordinate frame).
    """
    p = criteria.patch_size
    h_map, w_map = material_map.indices.shape
    if p > h_map or p > w_map:
        raise ArgumentError(f"patch size {p} exceeds map {h_map}x{w_map}")
    if stride is None:
        stride = max(1, p // 2)
    if stride < 1:
        raise ArgumentError("stride must be >= 1")

    non_air = (material_map.indices != AIR).astype(np.int64)
    # summed-area table with a zero row/col in front
    sat = np.zeros((h_map + 1, w_map + 1), np.int64)
    sat[1:, 1:] = non_air.cumsum(0).cumsum(1)

    ox, oy = material_map.origin
    spacing = material_map.spacing
    total = p * p
    out: list[tuple[tuple[int, int], MaterialMap]] = []
    for r0 in range(0, h_map - p + 1, stride):
        for c0 in range(0, w_map - p + 1, stride):
            count = (
                sat[r0 + p, c0 + p] - sat[r0, c0 + p] - sat[r0 + p, c0] + sat[r0, c0]
            )
            non_air_frac = count / total
            air_frac = (total - count) / total
            if non_air_frac >= criteria.min_non_air_fraction and air_frac >= criteria.min_air_fraction:
                patch = MaterialMap(
                    indices=material_map.indices[r0 : r0 + p, c0 : c0 + p],
                    spacing=spacing,
                    origin=(ox + c0 * spacing, oy + r0 * spacing),
                    table=material_map.table,
                )
                out.append(((r0, c0), patch))
    return out


def recenter(material_map: MaterialMap) -> MaterialMap:
    """Same map with its center moved to the isocenter.

    Extracted patches keep parent coordinates; simulation wants the patch
    centered in the scanner, like a subject positioned for its own scan.
    """
    h_map, w_map = material_map.indices.shape
    s = material_map.spacing
    return MaterialMap(
        indices=material_map.indices,
        spacing=s,
        origin=(-(w_map - 1) * s / 2.0, -(h_map - 1) * s / 2.0),
        table=material_map.table,
    )
