"""Paired-sample dataset assembly for denoiser training.

Each sample is one phantom patch pushed through the full measurement chain
twice from a single simulation pass: the polychromatic intensity gives the
clean member, adding compound Poisson noise (same seed, same geometry)
gives the noisy member.  Both are log-transformed, truncation-corrected
against a coarse full-object reconstruction, and FBP-reconstructed on the
fine grid, so the pair differs by measurement noise only.

Phantoms are assigned to train/validation/test splits by seed, never by
patch, and jaw-region phantoms go to the test split only.  The manifest
records every sample with its split so the hygiene is checkable after the
fact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio, rng
from .core import FanBeamGeometry, ImageGrid
from .errors import ArgumentError, GsctError, IoError
from .phantom import (PatchCriteria, PhantomSpec, Region, extract_patches,
                      generate_phantom, recenter)
from .physics import AcquisitionConfig, simulate_acquisition
from .recon import ReconGrid, TruncationConfig, fbp_reconstruct, truncation_correct

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class AcquisitionParams:
    """Scan geometry and tube settings shared by every sample."""

    tube_voltage_kv: float = 90.0
    exposure_mas: float = 12.5
    num_angles: int = 360
    source_to_isocenter: float = 300.0
    source_to_detector: float = 500.0
    detector_pixels: int = 384
    detector_spacing: float = 0.5
    noise_enabled: bool = True

    def __post_init__(self):
        if self.num_angles < 3:
            raise ArgumentError("num_angles must be >= 3")

    def geometry(self) -> FanBeamGeometry:
        return FanBeamGeometry.full_scan(
            self.source_to_isocenter,
            self.source_to_detector,
            self.detector_pixels,
            self.detector_spacing,
            self.num_angles,
        )

    def acquisition(self, rng_seed: int) -> AcquisitionConfig:
        return AcquisitionConfig.create(
            geometry=self.geometry(),
            tube_voltage=self.tube_voltage_kv,
            exposure=self.exposure_mas,
            noise_enabled=self.noise_enabled,
            rng_seed=rng_seed,
        )

    def to_dict(self) -> dict:
        return {
            "tube_voltage_kv": self.tube_voltage_kv,
            "exposure_mas": self.exposure_mas,
            "num_angles": self.num_angles,
            "source_to_isocenter": self.source_to_isocenter,
            "source_to_detector": self.source_to_detector,
            "detector_pixels": self.detector_pixels,
            "detector_spacing": self.detector_spacing,
            "noise_enabled": self.noise_enabled,
        }


@dataclass(frozen=True)
class ReconParams:
    """Fine reconstruction grid plus the coarse pass used for truncation."""

    fine_size: int = 96
    fine_spacing: float = 0.3
    coarse_size: int = 160
    coarse_spacing: float = 0.45
    feather_pixels: float = 2.0

    def fine_grid(self) -> ReconGrid:
        return ReconGrid(self.fine_size, self.fine_size, self.fine_spacing)

    def truncation(self) -> TruncationConfig:
        return TruncationConfig(
            coarse_size=self.coarse_size,
            coarse_spacing=self.coarse_spacing,
            fine_size=self.fine_size,
            fine_spacing=self.fine_spacing,
            feather_pixels=self.feather_pixels,
        )

    def to_dict(self) -> dict:
        return {
            "fine_size": self.fine_size,
            "fine_spacing": self.fine_spacing,
            "coarse_size": self.coarse_size,
            "coarse_spacing": self.coarse_spacing,
            "feather_pixels": self.feather_pixels,
        }


@dataclass(frozen=True)
class DatasetRecipe:
    """Everything needed to rebuild the dataset bit for bit."""

    num_phantoms: int = 36
    base_seed: int = 100
    split_fractions: tuple[float, float, float] = (0.76, 0.10, 0.14)
    phantom_size: int = 256
    phantom_spacing: float = 0.3
    patch_size: int = 128
    patch_stride: int = 64
    min_non_air_fraction: float = 0.20
    min_air_fraction: float = 0.10
    max_patches_per_phantom: int = 12
    acquisition: AcquisitionParams = field(default_factory=AcquisitionParams)
    recon: ReconParams = field(default_factory=ReconParams)
    noise_seed: int = 2024

    def __post_init__(self):
        if self.num_phantoms < 3:
            raise ArgumentError("need at least 3 phantoms, one per split")
        f = self.split_fractions
        if len(f) != 3 or any(x <= 0 for x in f) or not math.isclose(sum(f), 1.0, abs_tol=1e-9):
            raise ArgumentError("split_fractions must be 3 positive numbers summing to 1")
        if self.patch_size > self.phantom_size:
            raise ArgumentError("patch_size cannot exceed phantom_size")
        if self.max_patches_per_phantom < 1:
            raise ArgumentError("max_patches_per_phantom must be >= 1")

    def split_counts(self) -> dict[str, int]:
        n = self.num_phantoms
        n_val = max(1, round(n * self.split_fractions[1]))
        n_test = max(1, round(n * self.split_fractions[2]))
        n_train = n - n_val - n_test
        if n_train < 1:
            raise ArgumentError("split fractions leave no training phantoms")
        return {"train": n_train, "val": n_val, "test": n_test}

    def split_seeds(self) -> dict[str, tuple[int, ...]]:
        """Disjoint phantom seeds per split, deterministic in the recipe."""
        counts = self.split_counts()
        seeds = [self.base_seed + i for i in range(self.num_phantoms)]
        out = {
            "train": tuple(seeds[: counts["train"]]),
            "val": tuple(seeds[counts["train"]: counts["train"] + counts["val"]]),
            "test": tuple(seeds[counts["train"] + counts["val"]:]),
        }
        return out

    def region_for(self, seed: int, split: str) -> Region:
        # jaw anatomy is reserved for held-out evaluation; training and
        # validation phantoms alternate between the other two regions
        if split == "test":
            return Region.JAW
        return Region.HEAD if seed % 2 == 0 else Region.TORSO

    def phantom_spec(self, seed: int, split: str) -> PhantomSpec:
        return PhantomSpec(
            seed=seed,
            size=self.phantom_size,
            spacing=self.phantom_spacing,
            region=self.region_for(seed, split),
        )

    def patch_criteria(self) -> PatchCriteria:
        return PatchCriteria(
            patch_size=self.patch_size,
            min_non_air_fraction=self.min_non_air_fraction,
            min_air_fraction=self.min_air_fraction,
        )

    def to_dict(self) -> dict:
        return {
            "num_phantoms": self.num_phantoms,
            "base_seed": self.base_seed,
            "split_fractions": list(self.split_fractions),
            "phantom_size": self.phantom_size,
            "phantom_spacing": self.phantom_spacing,
            "patch_size": self.patch_size,
            "patch_stride": self.patch_stride,
            "min_non_air_fraction": self.min_non_air_fraction,
            "min_air_fraction": self.min_air_fraction,
            "max_patches_per_phantom": self.max_patches_per_phantom,
            "acquisition": self.acquisition.to_dict(),
            "recon": self.recon.to_dict(),
            "noise_seed": self.noise_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRecipe":
        d = dict(d)
        acq = AcquisitionParams(**d.pop("acquisition"))
        rec = ReconParams(**d.pop("recon"))
        d["split_fractions"] = tuple(d["split_fractions"])
        return cls(acquisition=acq, recon=rec, **d)


def _simulate_pair(patch, recipe: DatasetRecipe, sample_seed: int) -> tuple[ImageGrid, ImageGrid]:
    """Noisy and clean fine-grid reconstructions of one patch."""
    cfg = recipe.acquisition.acquisition(sample_seed)
    sim = simulate_acquisition(recenter(patch), cfg)
    trunc = recipe.recon.truncation()
    fine = recipe.recon.fine_grid().template()
    geometry = cfg.geometry
    out = []
    for sino in (sim.noisy_log, sim.clean_log):
        corrected = truncation_correct(sino, geometry, trunc)
        out.append(fbp_reconstruct(corrected, geometry, fine))
    return out[0], out[1]


def build_dataset(recipe: DatasetRecipe, output_dir) -> dict:
    """Simulate every accepted patch and write pairs plus the manifest.

    Returns the manifest dictionary; files land under `output_dir/pairs`.
    Any per-sample failure is re-raised with the offending sample id.
    """
    out_root = Path(output_dir)
    pairs_dir = out_root / "pairs"
    pairs_dir.mkdir(parents=True, exist_ok=True)

    split_seeds = recipe.split_seeds()
    criteria = recipe.patch_criteria()
    samples = []
    noise_power = []

    for split in SPLITS:
        for seed in split_seeds[split]:
            spec = recipe.phantom_spec(seed, split)
            phantom = generate_phantom(spec)
            patches = extract_patches(phantom, criteria, stride=recipe.patch_stride)
            patches = patches[: recipe.max_patches_per_phantom]
            for origin_px, patch in patches:
                py, px = origin_px
                sample_id = f"p{seed:05d}_y{py:04d}_x{px:04d}"
                try:
                    sample_seed = rng.derive_key(recipe.noise_seed, "sample", sample_id)
                    noisy, clean = _simulate_pair(patch, recipe, sample_seed)
                    noisy_rel = f"pairs/{sample_id}_noisy.gsct"
                    clean_rel = f"pairs/{sample_id}_clean.gsct"
                    fileio.write_image(noisy, out_root / noisy_rel)
                    fileio.write_image(clean, out_root / clean_rel)
                except GsctError as exc:
                    raise type(exc)(f"sample {sample_id}: {exc}", tag=exc.tag) from exc
                diff = noisy.values.astype(np.float64) - clean.values.astype(np.float64)
                noise_std = float(np.sqrt(np.mean(diff * diff)))
                noise_power.append(noise_std)
                samples.append({
                    "id": sample_id,
                    "phantom_seed": seed,
                    "region": spec.region.value,
                    "split": split,
                    "patch_origin_px": [int(py), int(px)],
                    "noisy": noisy_rel,
                    "clean": clean_rel,
                    "noise_std": noise_std,
                })

    if not samples:
        raise ArgumentError("recipe produced no accepted patches")

    manifest = {
        "version": MANIFEST_VERSION,
        "recipe": recipe.to_dict(),
        "split_seeds": {k: list(v) for k, v in split_seeds.items()},
        "sigma": float(np.mean(noise_power)),
        "samples": samples,
    }
    payload = json.dumps(manifest, indent=1, sort_keys=True).encode() + b"\n"
    fileio.atomic_write_bytes(out_root / MANIFEST_NAME, payload)
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.is_file():
        raise IoError(f"no {MANIFEST_NAME} in {dataset_dir}", tag="IO_NOT_FOUND")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IoError(f"unparseable manifest: {exc}", tag="FORMAT_INVALID") from exc
    for key in ("version", "samples", "recipe"):
        if key not in manifest:
            raise IoError(f"manifest missing key {key!r}", tag="FORMAT_INVALID")
    return manifest


def manifest_samples(manifest: dict, split: str | None = None) -> list[dict]:
    rows = manifest["samples"]
    if split is None:
        return list(rows)
    if split not in SPLITS:
        raise ArgumentError(f"unknown split {split!r}, expected one of {SPLITS}")
    return [r for r in rows if r["split"] == split]


def check_split_hygiene(manifest: dict) -> None:
    """Raise unless phantom seeds are split-disjoint and jaw is test-only."""
    seen: dict[int, str] = {}
    for row in manifest["samples"]:
        seed, split = row["phantom_seed"], row["split"]
        if seen.setdefault(seed, split) != split:
            raise ArgumentError(f"phantom seed {seed} appears in splits "
                                f"{seen[seed]!r} and {split!r}")
        if row["region"] == Region.JAW.value and split != "test":
            raise ArgumentError(f"jaw phantom {seed} leaked into split {split!r}")


def load_pair(dataset_dir, row: dict) -> tuple[ImageGrid, ImageGrid]:
    root = Path(dataset_dir)
    return fileio.read_image(root / row["noisy"]), fileio.read_image(root / row["clean"])
