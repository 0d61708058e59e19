"""Embedded linear attenuation model for the simulated materials.

Each curve uses the classic two-term diagnostic-range parametrization

    mu(E) = a * E^-3 + b * kn(E)        [mm^-1, E in keV]

where the E^-3 term stands in for photoelectric absorption and kn(E) is the
total Klein-Nishita cross section normalized to 1 at 60 keV, standing in for
incoherent scattering.  The (a, b) pairs below were solved from two anchor
values per material (representative linear attenuation at 30 and 60 keV:
soft tissue 0.0376/0.0206, muscle 0.0397/0.0215, cartilage 0.0430/0.0231,
cortical bone 0.2560/0.0605, tooth enamel 0.450/0.096 mm^-1).  Air is
modeled as exactly zero attenuation, which also satisfies the table
invariant that index 0 lower-bounds every curve.
"""

from __future__ import annotations

import io

import numpy as np

from .core import MaterialTable, Spectrum
from .errors import ArgumentError

_ELECTRON_REST_KEV = 510.998950

# material indices used by every phantom map
AIR = 0
SOFT_TISSUE = 1
MUSCLE = 2
CARTILAGE = 3
BONE = 4
ENAMEL = 5

# name -> (a, b) of the two-term model; insertion order fixes the indices
MATERIAL_COEFFS: dict[str, tuple[float, float]] = {
    "air": (0.0, 0.0),
    "soft_tissue": (470.528, 0.0184216),
    "muscle": (505.390, 0.0191602),
    "cartilage": (553.810, 0.0205361),
    "bone": (5935.70, 0.0330199),
    "enamel": (10788.3, 0.0460541),
}

MATERIAL_NAMES: tuple[str, ...] = tuple(MATERIAL_COEFFS)


def kn_cross_section(energies_kev) -> np.ndarray:
    """Total Klein-Nishina cross section, normalized to 1 at 60 keV."""
    e = np.asarray(energies_kev, dtype=np.float64)
    if np.any(e <= 0):
        raise ArgumentError("kn_cross_section needs positive energies")

    def raw(ev):
        a = ev / _ELECTRON_REST_KEV
        t1 = (1 + a) / a**2 * (2 * (1 + a) / (1 + 2 * a) - np.log1p(2 * a) / a)
        t2 = np.log1p(2 * a) / (2 * a)
        t3 = -(1 + 3 * a) / (1 + 2 * a) ** 2
        return t1 + t2 + t3

    return raw(e) / raw(np.float64(60.0))


def attenuation_curve(name: str, energies_kev) -> np.ndarray:
    """mu(E) in mm^-1 for one named material on the given energy grid."""
    if name not in MATERIAL_COEFFS:
        raise ArgumentError(f"unknown material {name!r}")
    a, b = MATERIAL_COEFFS[name]
    e = np.asarray(energies_kev, dtype=np.float64)
    if np.any(e <= 0):
        raise ArgumentError("attenuation model is defined for E > 0 only")
    if a == 0.0 and b == 0.0:
        return np.zeros_like(e)
    return a * e**-3.0 + b * kn_cross_section(e)


def build_material_table(energies_kev) -> MaterialTable:
    """Table with all embedded materials sampled on the given grid."""
    e = np.asarray(energies_kev, dtype=np.float64)
    curves = np.stack([attenuation_curve(n, e) for n in MATERIAL_NAMES])
    return MaterialTable(names=MATERIAL_NAMES, energies=e, curves=curves)


def table_for_spectrum(spectrum: Spectrum) -> MaterialTable:
    return build_material_table(spectrum.energies)


def table_to_json(table: MaterialTable) -> dict:
    return {
        "names": list(table.names),
        "energies_kev": table.energies.tolist(),
        "curves_per_mm": table.curves.tolist(),
    }


def table_from_json(doc: dict) -> MaterialTable:
    try:
        return MaterialTable(
            names=tuple(doc["names"]),
            energies=np.asarray(doc["energies_kev"], dtype=np.float64),
            curves=np.asarray(doc["curves_per_mm"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ArgumentError(f"invalid material table document: {exc}") from exc


def table_to_csv(table: MaterialTable) -> str:
    """Inspection export: one row per energy, one column per material."""
    buf = io.StringIO()
    buf.write("energy_kev," + ",".join(table.names) + "\n")
    for i, e in enumerate(table.energies):
        row = ",".join(repr(float(c)) for c in table.curves[:, i])
        buf.write(f"{float(e)!r},{row}\n")
    return buf.getvalue()
