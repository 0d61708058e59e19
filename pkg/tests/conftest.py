import numpy as np
import pytest

from gsct import dataset as ds
from gsct import denoiser as dn
from gsct import rng
from gsct.core import FanBeamGeometry
from gsct.phantom import PhantomSpec, Region, generate_phantom
from gsct.physics import simulate_acquisition
from gsct.recon import ReconGrid


@pytest.fixture(scope="session")
def small_geometry() -> FanBeamGeometry:
    """Fast fan-beam geometry for unit tests: 48 views, 96 detector pixels."""
    return FanBeamGeometry.full_scan(
        num_angles=48,
        detector_pixels=96,
        detector_spacing=1.0,
        source_to_isocenter=300.0,
        source_to_detector=500.0,
    )


@pytest.fixture(scope="session")
def small_scan(small_geometry):
    """One noisy + clean simulated head scan against small_geometry."""
    acq = ds.AcquisitionParams(
        num_angles=small_geometry.num_angles,
        detector_pixels=small_geometry.detector_pixels,
        detector_spacing=small_geometry.detector_spacing,
        exposure_mas=2.0,
    )
    mm = generate_phantom(PhantomSpec(region=Region.HEAD, size=64,
                                      spacing=0.9, seed=7))
    sim = simulate_acquisition(mm, acq.acquisition(31))
    return mm, acq.geometry(), sim


@pytest.fixture(scope="session")
def small_grid() -> ReconGrid:
    return ReconGrid(64, 64, 0.9)


@pytest.fixture(scope="session")
def tiny_model() -> dn.DenoiserModel:
    """Smallest valid network with a non-trivial (random) tail."""
    spec = dn.NetworkSpec(channels=(2, 2), convs_per_level=1)
    params = dict(dn.init_weights(spec, seed=3))
    gen = rng.generator(9, "unit-test-tail")
    params["tail.w"] = gen.normal(0.0, 0.05,
                                  params["tail.w"].shape).astype(np.float32)
    return dn.DenoiserModel(spec, params)


@pytest.fixture(scope="session")
def identity_model() -> dn.DenoiserModel:
    """Zero-tail network: exactly the identity map with zero prior."""
    spec = dn.NetworkSpec(channels=(2, 2), convs_per_level=1)
    params = dict(dn.init_weights(spec, seed=3))
    for name in ("tail.w", "tail.b"):
        params[name] = np.zeros_like(params[name])
    return dn.DenoiserModel(spec, params)


def rand_image(gen, height, width, scale=1.0):
    return gen.normal(0.0, scale, (height, width))
