"""Polychromatic acquisition simulation.

The detected intensity along ray (a, d) is

    I(a, d) = sum_E S(E) * exp(-sum_m mu_m(E) * l_m(a, d))

with S the effective spectrum, mu_m the material attenuation curves, and
l_m the per-material intersection lengths from the projector.  Photon noise
replaces each energy bin's expected count by an independent Poisson draw and
sums the draws (photon-counting detector; no electronic noise).  The pre-log
step converts intensities to line integrals with a documented count floor.

Noise sampling uses one counter-based substream per projection angle, so the
same seed gives the same sinogram no matter how the computation is chunked.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as _rng
from .core import (
    FanBeamGeometry,
    ImageGrid,
    MaterialTable,
    Sinogram,
    SinogramKind,
    Spectrum,
)
from .errors import ArgumentError
from .projector import Projector

SPECTRUM_MAX_KEV = 90.0
SPECTRUM_BIN_KEV = 0.5

# Calibration of the Kramers spectrum: the constant below makes the total
# expected fluence of an unattenuated ray equal REFERENCE_FLUENCE at the
# default operating point (90 kV, 12.5 mAs).  The bin sum of (90 - E_c) over
# the 180 default bin centers is exactly 8100.
REFERENCE_FLUENCE = 1.0e4
_DEFAULT_KV = 90.0
_DEFAULT_MAS = 12.5
KRAMERS_SCALE = REFERENCE_FLUENCE / (_DEFAULT_MAS * 8100.0)

# Pre-log floor applied to measured counts so zero-count bins stay finite.
LOG_FLOOR_COUNTS = 0.5


def spectrum_bin_centers() -> np.ndarray:
    n = int(round(SPECTRUM_MAX_KEV / SPECTRUM_BIN_KEV))
    return (np.arange(n, dtype=np.float64) + 0.5) * SPECTRUM_BIN_KEV


def build_spectrum(tube_voltage: float, exposure: float) -> Spectrum:
    """Kramers-law bremsstrahlung spectrum on the fixed 0-90 keV binning.

    Weights are S(E) = KRAMERS_SCALE * exposure * max(tube_voltage - E, 0)
    evaluated at the bin centers; zero above the tube voltage, linear in
    exposure (mAs).
    """
    if not (0 < tube_voltage <= SPECTRUM_MAX_KEV):
        raise ArgumentError(
            f"tube_voltage must be in (0, {SPECTRUM_MAX_KEV}] kV, got {tube_voltage}"
        )
    if not exposure > 0:
        raise ArgumentError(f"exposure must be > 0 mAs, got {exposure}")
    centers = spectrum_bin_centers()
    weights = KRAMERS_SCALE * exposure * np.maximum(tube_voltage - centers, 0.0)
    return Spectrum(energies=centers, weights=weights)


def spectrum_to_csv(spectrum: Spectrum) -> str:
    buf = io.StringIO()
    buf.write("energy_kev,photons_per_ray\n")
    for e, w in zip(spectrum.energies, spectrum.weights):
        buf.write(f"{float(e)!r},{float(w)!r}\n")
    return buf.getvalue()


@dataclass(frozen=True, eq=False)
class MaterialMap:
    """Material-index field plus the table that defines the indices."""

    indices: np.ndarray  # uint8, shape (height, width), read-only
    spacing: float
    origin: tuple[float, float]
    table: MaterialTable

    def __post_init__(self):
        arr = np.array(self.indices, dtype=np.uint8, order="C", copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ArgumentError("MaterialMap indices must be a non-empty 2D array")
        if arr.max(initial=0) >= self.table.num_materials:
            raise ArgumentError(
                f"material index {int(arr.max())} not present in the table"
            )
        if not (self.spacing > 0):
            raise ArgumentError("MaterialMap spacing must be > 0")
        arr.flags.writeable = False
        object.__setattr__(self, "indices", arr)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def height(self) -> int:
        return self.indices.shape[0]

    @property
    def width(self) -> int:
        return self.indices.shape[1]

    def indicator(self, material_index: int) -> np.ndarray:
        """1.0 where the map equals the material, else 0.0 (float64)."""
        if not 0 <= material_index < self.table.num_materials:
            raise ArgumentError(f"material index {material_index} out of range")
        return (self.indices == material_index).astype(np.float64)

    def present_materials(self) -> list[int]:
        return sorted(int(i) for i in np.unique(self.indices))

    def to_image(self) -> ImageGrid:
        return ImageGrid.from_array(
            self.indices.astype(np.float32), self.spacing, self.origin
        )

    @classmethod
    def from_image(cls, grid: ImageGrid, table: MaterialTable) -> "MaterialMap":
        vals = grid.values
        rounded = np.rint(vals)
        if not np.array_equal(rounded, vals):
            raise ArgumentError("image does not hold integral material indices")
        if vals.min(initial=0) < 0 or vals.max(initial=0) >= table.num_materials:
            raise ArgumentError("image holds indices outside the material table")
        return cls(indices=rounded.astype(np.uint8), spacing=grid.spacing,
                   origin=grid.origin, table=table)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaterialMap):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and self.table == other.table
            and np.array_equal(self.indices, other.indices)
        )


@dataclass(frozen=True)
class AcquisitionConfig:
    """Everything that determines one simulated scan."""

    spectrum: Spectrum
    geometry: FanBeamGeometry
    tube_voltage: float = _DEFAULT_KV
    exposure: float = _DEFAULT_MAS
    noise_enabled: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if not self.tube_voltage > 0:
            raise ArgumentError("tube_voltage must be > 0")
        if not self.exposure > 0:
            raise ArgumentError("exposure must be > 0")

    @classmethod
    def create(
        cls,
        geometry: FanBeamGeometry,
        tube_voltage: float = _DEFAULT_KV,
        exposure: float = _DEFAULT_MAS,
        noise_enabled: bool = True,
        rng_seed: int = 0,
    ) -> "AcquisitionConfig":
        return cls(
            spectrum=build_spectrum(tube_voltage, exposure),
            geometry=geometry,
            tube_voltage=tube_voltage,
            exposure=exposure,
            noise_enabled=noise_enabled,
            rng_seed=rng_seed,
        )


def material_sinograms(material_map: MaterialMap, geometry: FanBeamGeometry) -> list[Sinogram]:
    """Per-material intersection lengths: forward projection of indicators.

    Returns one line-integral sinogram per table entry, in table order (air
    included), each holding the path length in mm of the ray through that
    material's pixels.
    """
    proj = Projector(geometry, material_map.width, material_map.height,
                     material_map.spacing, material_map.origin)
    out = []
    for m in range(material_map.table.num_materials):
        values = proj.forward(material_map.indicator(m))
        out.append(Sinogram(geometry=geometry, kind=SinogramKind.LINE_INTEGRAL,
                            values=values.astype(np.float32)))
    return out


def _path_length_array(material_sinos: Sequence[Sinogram], table: MaterialTable) -> np.ndarray:
    if len(material_sinos) != table.num_materials:
        raise ArgumentError(
            f"expected {table.num_materials} material sinograms, got {len(material_sinos)}"
        )
    geo = material_sinos[0].geometry
    for s in material_sinos:
        if not s.geometry.matches(geo):
            raise ArgumentError("material sinograms disagree on geometry")
        if s.kind != SinogramKind.LINE_INTEGRAL:
            raise ArgumentError("material sinograms must be line integrals")
    lengths = np.stack([s.as_float64() for s in material_sinos])
    if lengths.min(initial=0.0) < 0:
        raise ArgumentError("negative material path length", tag="ARG_NEGATIVE_PATH")
    return lengths  # (num_materials, num_angles, detector_pixels)


def _check_table_on_spectrum(table: MaterialTable, spectrum: Spectrum) -> None:
    if not np.array_equal(table.energies, spectrum.energies):
        raise ArgumentError("material table is not sampled on the spectrum energy grid")


def polychromatic_components(
    path_lengths: np.ndarray, table: MaterialTable, spectrum: Spectrum
) -> np.ndarray:
    """Expected counts per energy bin: S(E) * exp(-sum_m mu_m(E) l_m).

    path_lengths has shape (num_materials, ...); the result appends an
    energy axis: shape (..., num_bins), float64.
    """
    _check_table_on_spectrum(table, spectrum)
    pl = np.asarray(path_lengths, dtype=np.float64)
    if pl.shape[0] != table.num_materials:
        raise ArgumentError("path_lengths first axis must index table materials")
    if pl.min(initial=0.0) < 0:
        raise ArgumentError("negative material path length", tag="ARG_NEGATIVE_PATH")
    # optical depth per ray and energy: tensordot over the material axis
    depth = np.tensordot(pl, table.curves, axes=(0, 0))  # (..., num_bins)
    return spectrum.weights * np.exp(-depth)


def polychromatic_intensity(
    material_sinos: Sequence[Sinogram], table: MaterialTable, spectrum: Spectrum
) -> Sinogram:
    """Expected detected intensity sinogram (no noise)."""
    lengths = _path_length_array(material_sinos, table)
    geo = material_sinos[0].geometry
    n_ang = lengths.shape[1]
    out = np.empty((n_ang, lengths.shape[2]), np.float64)
    # chunk over angles to bound the (angles, pixels, bins) intermediate
    chunk = max(1, int(2e6 // max(1, lengths.shape[2] * spectrum.num_bins)))
    for a0 in range(0, n_ang, chunk):
        comp = polychromatic_components(lengths[:, a0 : a0 + chunk], table, spectrum)
        out[a0 : a0 + chunk] = comp.sum(axis=-1)
    return Sinogram(geometry=geo, kind=SinogramKind.INTENSITY,
                    values=out.astype(np.float32))


def sample_photon_counts(
    components: np.ndarray,
    rng_seed: int,
    angle_offset: int = 0,
    bin_weights: np.ndarray | None = None,
) -> np.ndarray:
    """Noisy total counts: per-bin Poisson draws summed over the energy axis.

    components: expected counts, shape (num_angles, ..., num_bins).  Each
    angle consumes its own derived substream, indexed by absolute angle
    number angle_offset + a, so chunked and one-shot simulation draw
    identical noise.

    bin_weights, if given, scales each bin's draw before summing (an
    energy-integrating detector would use the deposited energy here); by
    default the draws are summed unweighted, i.e. a photon-counting
    detector.  The expected value of the weighted sum is the weighted
    component sum, not the plain intensity.
    """
    comp = np.asarray(components, dtype=np.float64)
    if comp.ndim < 2:
        raise ArgumentError("components must have shape (angles, ..., bins)")
    if comp.min(initial=0.0) < 0:
        raise ArgumentError("negative Poisson rate", tag="ARG_NEGATIVE_RATE")
    if bin_weights is not None:
        bin_weights = np.asarray(bin_weights, dtype=np.float64)
        if bin_weights.shape != (comp.shape[-1],):
            raise ArgumentError("bin_weights must match the energy axis")
    out = np.empty(comp.shape[:-1], np.float64)
    for a in range(comp.shape[0]):
        gen = _rng.generator(rng_seed, "photon-noise", angle_offset + a)
        draws = gen.poisson(lam=comp[a]).astype(np.float64)
        if bin_weights is not None:
            draws = draws * bin_weights
        out[a] = draws.sum(axis=-1)
    return out


def sample_photon_noise(
    components: np.ndarray,
    geometry: FanBeamGeometry,
    rng_seed: int,
    bin_weights: np.ndarray | None = None,
) -> Sinogram:
    """Sinogram-typed wrapper around sample_photon_counts."""
    comp = np.asarray(components, dtype=np.float64)
    expected = (geometry.num_angles, geometry.detector_pixels)
    if comp.shape[:-1] != expected:
        raise ArgumentError(
            f"components shape {comp.shape[:-1]} does not match geometry {expected}"
        )
    counts = sample_photon_counts(comp, rng_seed, bin_weights=bin_weights)
    return Sinogram(geometry=geometry, kind=SinogramKind.INTENSITY,
                    values=counts.astype(np.float32))


def log_transform(intensity: Sinogram, reference_fluence: float) -> Sinogram:
    """p = -ln(max(I, LOG_FLOOR_COUNTS) / I0); the floor keeps p finite."""
    if not reference_fluence > 0:
        raise ArgumentError("reference_fluence must be > 0")
    if intensity.kind != SinogramKind.INTENSITY:
        raise ArgumentError("log_transform expects an intensity sinogram")
    vals = np.maximum(intensity.as_float64(), LOG_FLOOR_COUNTS)
    p = -np.log(vals / reference_fluence)
    return Sinogram(geometry=intensity.geometry, kind=SinogramKind.LINE_INTEGRAL,
                    values=p.astype(np.float32))


def effective_attenuation_map(material_map: MaterialMap, spectrum: Spectrum) -> ImageGrid:
    """Per-pixel mu at the spectrum's mean energy (table curves interpolated)."""
    e_bar = spectrum.mean_energy()
    table = material_map.table
    mu_at_ebar = np.array(
        [np.interp(e_bar, table.energies, table.curves[m]) for m in range(table.num_materials)]
    )
    values = mu_at_ebar[material_map.indices]
    return ImageGrid.from_array(values.astype(np.float32), material_map.spacing,
                                material_map.origin)


@dataclass(frozen=True)
class SimulationResult:
    """Outputs of one simulated scan of a material map."""

    clean_intensity: Sinogram
    noisy_intensity: Sinogram | None
    clean_log: Sinogram
    noisy_log: Sinogram | None
    reference_fluence: float

    @property
    def measured_log(self) -> Sinogram:
        return self.noisy_log if self.noisy_log is not None else self.clean_log


def simulate_acquisition(material_map: MaterialMap, config: AcquisitionConfig) -> SimulationResult:
    """Full scan simulation: path lengths -> intensity -> noise -> log.

    Computes expected and (if enabled) noisy intensities in one pass over
    angle chunks so the per-energy components are never fully materialized.
    """
    _check_table_on_spectrum(material_map.table, config.spectrum)
    geo = config.geometry
    table = material_map.table
    proj = Projector(geo, material_map.width, material_map.height,
                     material_map.spacing, material_map.origin)

    # indicator projections only for materials actually present; absent
    # materials have identically zero path length and drop out of Eq. form
    present = [m for m in material_map.present_materials()]
    lengths = np.stack([proj.forward(material_map.indicator(m)) for m in present])
    np.maximum(lengths, 0.0, out=lengths)
    curves = table.curves[present]

    n_ang, n_det = geo.num_angles, geo.detector_pixels
    n_bins = config.spectrum.num_bins
    clean = np.empty((n_ang, n_det), np.float64)
    noisy = np.empty((n_ang, n_det), np.float64) if config.noise_enabled else None
    chunk = max(1, int(4e6 // max(1, n_det * n_bins)))
    for a0 in range(0, n_ang, chunk):
        sl = slice(a0, min(a0 + chunk, n_ang))
        depth = np.tensordot(lengths[:, sl], curves, axes=(0, 0))
        comp = config.spectrum.weights * np.exp(-depth)
        clean[sl] = comp.sum(axis=-1)
        if noisy is not None:
            noisy[sl] = sample_photon_counts(comp, config.rng_seed, angle_offset=a0)

    i0 = config.spectrum.total_fluence()
    clean_int = Sinogram(geo, SinogramKind.INTENSITY, clean.astype(np.float32))
    clean_log = log_transform(clean_int, i0)
    noisy_int = None
    noisy_log = None
    if noisy is not None:
        noisy_int = Sinogram(geo, SinogramKind.INTENSITY, noisy.astype(np.float32))
        noisy_log = log_transform(noisy_int, i0)
    return SimulationResult(
        clean_intensity=clean_int,
        noisy_intensity=noisy_int,
        clean_log=clean_log,
        noisy_log=noisy_log,
        reference_fluence=i0,
    )
