"""Classical reconstruction: fan-beam FBP, truncation correction, CG and GD.

FBP follows the equispaced flat-detector weighting scheme with the detector
rescaled onto a virtual axis through the isocenter: cosine pre-weighting,
Ram-Lak filtering via zero-padded FFT, then distance-weighted backprojection
with the R^2/L^2 factor, where L is the point's distance from the source
along the central-ray direction.  A full 2*pi scan measures every line
twice, hence the global factor delta_theta / 2.

Truncation correction reconstructs the raw sinogram on a coarse grid whose
field of view contains the whole object, zeroes that image inside the fine
field of view (with a short feathered transition to avoid a sharp edge in
the reprojection), forward-projects the remainder, and subtracts it from
the input sinogram.  What is left is consistent with an object supported on
the fine field of view alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FanBeamGeometry, ImageGrid, Sinogram, SinogramKind
from .errors import ArgumentError, NumericalError
from .projector import Projector

_DIVERGENCE_FACTOR = 1.0e3


@dataclass(frozen=True)
class ReconGrid:
    """Reconstruction grid description; origin defaults to centered."""

    width: int = 592
    height: int = 592
    spacing: float = 0.15
    origin: tuple[float, float] | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ArgumentError("ReconGrid dimensions must be >= 1")
        if not (self.spacing > 0):
            raise ArgumentError("ReconGrid spacing must be > 0")

    def template(self) -> ImageGrid:
        return ImageGrid.zeros(self.width, self.height, self.spacing, self.origin)


@dataclass(frozen=True)
class TruncationConfig:
    """Out-of-FOV correction settings.

    The coarse FOV (coarse_size * coarse_spacing) must strictly contain the
    fine FOV (fine_size * fine_spacing).  feather_pixels sets the width, in
    coarse pixels, of the linear ramp between the zeroed fine region and the
    untouched exterior.
    """

    coarse_size: int = 592
    coarse_spacing: float = 0.4
    fine_size: int = 592
    fine_spacing: float = 0.15
    enabled: bool = True
    feather_pixels: float = 2.0

    def __post_init__(self):
        if self.coarse_size < 1 or self.fine_size < 1:
            raise ArgumentError("truncation grid sizes must be >= 1")
        if not (self.coarse_spacing > 0 and self.fine_spacing > 0):
            raise ArgumentError("truncation spacings must be > 0")
        if self.feather_pixels < 0:
            raise ArgumentError("feather_pixels must be >= 0")
        if self.coarse_size * self.coarse_spacing <= self.fine_size * self.fine_spacing:
            raise ArgumentError(
                "coarse FOV must strictly contain the fine FOV",
                tag="ARG_FOV_CONFIG",
            )


def _as_template(grid) -> ImageGrid:
    if isinstance(grid, ReconGrid):
        return grid.template()
    if isinstance(grid, ImageGrid):
        return grid
    raise ArgumentError(f"expected ImageGrid or ReconGrid, got {type(grid).__name__}")


def _require_line_integrals(sino: Sinogram) -> None:
    if sino.kind != SinogramKind.LINE_INTEGRAL:
        raise ArgumentError("reconstruction expects a line-integral sinogram")


def ramp_filter_rows(rows: np.ndarray, sample_spacing: float) -> np.ndarray:
    """Ram-Lak filtering of each row via zero-padded frequency multiplication."""
    n = rows.shape[-1]
    npad = 1 << max(1, int(math.ceil(math.log2(max(2, 2 * n)))))
    freqs = np.abs(np.fft.fftfreq(npad, d=sample_spacing))
    spec = np.fft.fft(rows, n=npad, axis=-1)
    filtered = np.fft.ifft(spec * freqs, axis=-1).real
    return np.ascontiguousarray(filtered[..., :n])


def fbp_reconstruct(sino: Sinogram, geometry: FanBeamGeometry, grid) -> ImageGrid:
    """Filtered backprojection of a full-scan fan-beam sinogram, in mm^-1."""
    _require_line_integrals(sino)
    if not sino.geometry.matches(geometry):
        raise ArgumentError("sinogram geometry does not match argument geometry")
    if geometry.num_angles < 3:
        raise ArgumentError("FBP needs at least 3 projection angles")
    template = _as_template(grid)

    R = geometry.source_to_isocenter
    scale = R / geometry.source_to_detector
    du = geometry.detector_spacing * scale
    nd = geometry.detector_pixels
    u = (np.arange(nd, dtype=np.float64) - (nd - 1) / 2.0) * du

    p = sino.as_float64()
    weighted = p * (R / np.sqrt(R * R + u * u))[None, :]
    q = ramp_filter_rows(weighted, du)

    X, Y = template.pixel_centers()
    acc = np.zeros_like(X)
    cos = np.cos(geometry.angles)
    sin = np.sin(geometry.angles)
    for a in range(geometry.num_angles):
        L = R - X * cos[a] - Y * sin[a]
        up = R * (-X * sin[a] + Y * cos[a]) / L
        vals = np.interp(up, u, q[a], left=0.0, right=0.0)
        acc += vals * (R * R) / (L * L)

    dtheta = 2.0 * math.pi / geometry.num_angles
    acc *= dtheta / 2.0
    return template.with_values(acc.astype(np.float32))


def truncation_correct(sino: Sinogram, geometry: FanBeamGeometry,
                       cfg: TruncationConfig) -> Sinogram:
    """Subtract the forward projection of the out-of-fine-FOV coarse image."""
    if not cfg.enabled:
        raise ArgumentError("truncation correction called with enabled=False")
    _require_line_integrals(sino)

    coarse_grid = ImageGrid.zeros(cfg.coarse_size, cfg.coarse_size, cfg.coarse_spacing)
    coarse = fbp_reconstruct(sino, geometry, coarse_grid)

    X, Y = coarse_grid.pixel_centers()
    half_fine = cfg.fine_size * cfg.fine_spacing / 2.0
    d = np.maximum(np.abs(X), np.abs(Y)) - half_fine
    ramp = cfg.feather_pixels * cfg.coarse_spacing
    if ramp > 0:
        w = np.clip(d / ramp, 0.0, 1.0)
    else:
        w = (d > 0).astype(np.float64)

    masked = coarse.as_float64() * w
    proj = Projector.for_grid(geometry, coarse_grid)
    correction = proj.forward(masked)
    corrected = sino.as_float64() - correction
    return sino.with_values(corrected.astype(np.float32))


def cg_reconstruct(sino: Sinogram, geometry: FanBeamGeometry, grid,
                   iterations: int, history: list | None = None) -> ImageGrid:
    """Conjugate gradient on the normal equations A^T A x = A^T p from x0 = 0.

    CGLS recursion; if `history` is a list it receives the relative data
    residual ||A x_k - p|| / ||p|| after every iteration.
    """
    _require_line_integrals(sino)
    if not sino.geometry.matches(geometry):
        raise ArgumentError("sinogram geometry does not match argument geometry")
    if iterations < 1:
        raise ArgumentError("cg_reconstruct needs iterations >= 1")
    template = _as_template(grid)
    proj = Projector.for_grid(geometry, template)

    p = sino.as_float64()
    p_norm = float(np.linalg.norm(p))
    x = np.zeros((template.height, template.width), np.float64)
    r = p.copy()  # p - A x
    s = proj.adjoint(r)
    d = s.copy()
    gamma = float((s * s).sum())
    for _ in range(iterations):
        if gamma == 0.0:
            break
        q = proj.forward(d)
        qq = float((q * q).sum())
        if qq == 0.0:
            break
        alpha = gamma / qq
        x += alpha * d
        r -= alpha * q
        if history is not None:
            history.append(float(np.linalg.norm(r)) / p_norm if p_norm else 0.0)
        s = proj.adjoint(r)
        gamma_new = float((s * s).sum())
        d = s + (gamma_new / gamma) * d
        gamma = gamma_new
    return template.with_values(x.astype(np.float32))


def gd_step(proj: Projector, x: np.ndarray, p: np.ndarray, tau: float) -> np.ndarray:
    """One unregularized step x - tau * A^T (A x - p); shared with PnP at lambda=0."""
    return x - tau * proj.adjoint(proj.forward(x) - p)


def gd_reconstruct(sino: Sinogram, geometry: FanBeamGeometry, grid,
                   step: float, iterations: int,
                   history: list | None = None) -> ImageGrid:
    """Plain gradient descent on f(x) = 0.5 ||A x - p||^2 from x0 = 0.

    Aborts with a numerical error when the iterate norm grows by more than
    three orders of magnitude over the first step's scale, which signals a
    step size beyond the stability bound.
    """
    _require_line_integrals(sino)
    if not sino.geometry.matches(geometry):
        raise ArgumentError("sinogram geometry does not match argument geometry")
    if not step > 0:
        raise ArgumentError("gd_reconstruct needs step > 0")
    if iterations < 0:
        raise ArgumentError("iterations must be >= 0")
    template = _as_template(grid)
    proj = Projector.for_grid(geometry, template)

    p = sino.as_float64()
    x = np.zeros((template.height, template.width), np.float64)
    guard_scale = None
    for k in range(iterations):
        x = gd_step(proj, x, p, step)
        norm = float(np.linalg.norm(x))
        if guard_scale is None:
            guard_scale = max(norm, np.finfo(np.float64).tiny)
        if not np.isfinite(norm) or norm > _DIVERGENCE_FACTOR * guard_scale:
            raise NumericalError(
                f"gradient descent diverged at iteration {k + 1} "
                f"(iterate norm {norm:.3e} vs initial scale {guard_scale:.3e})",
                tag="GD_DIVERGENCE",
            )
        if history is not None:
            resid = proj.forward(x) - p
            history.append(0.5 * float((resid * resid).sum()))
    return template.with_values(x.astype(np.float32))


def estimate_lipschitz(geometry: FanBeamGeometry, grid, power_iterations: int) -> float:
    """Power-method estimate of the largest eigenvalue of A^T A.

    Starts from the normalized constant image; returns the final Rayleigh
    quotient, which is non-decreasing in the iteration count.
    """
    if power_iterations < 1:
        raise ArgumentError("power_iterations must be >= 1")
    template = _as_template(grid)
    proj = Projector.for_grid(geometry, template)
    v = np.ones((template.height, template.width), np.float64)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(power_iterations):
        w = proj.adjoint(proj.forward(v))
        est = float((v * w).sum())
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
    return est
