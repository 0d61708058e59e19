"""End-to-end acceptance gate: ten numbered criteria, one verdict line each.

The dataset and the trained model are expensive, so they are cached under
.acceptance_cache keyed by their configuration; wall-clock durations are
recorded when the work actually runs and reused on cache hits.  Delete the
cache directory to re-measure from scratch.
"""

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

from gsct import bench, cli, materials, physics, pnp, recon, rng
from gsct import dataset as ds
from gsct import denoiser as dn
from gsct import training as tr
from gsct.core import FanBeamGeometry, ImageGrid
from gsct.projector import Projector, forward_project

CACHE = Path(__file__).resolve().parent.parent / ".acceptance_cache"

DESK_RECIPE = ds.DatasetRecipe(
    acquisition=ds.AcquisitionParams(exposure_mas=0.5),
)
TRAIN_CFG = tr.TrainConfig(epochs=40, learning_rate=3e-4, batch_size=8,
                           crop_size=64, rng_seed=11)
NETWORK = dn.NetworkSpec()
INIT_SEED = 7


def _verdict(num: int, passed: bool, detail: str) -> bool:
    print(f"C{num} {'PASS' if passed else 'FAIL'}: {detail}", flush=True)
    return passed


def _cache_key(*parts: str) -> str:
    return hashlib.sha256("\x1f".join(parts).encode()).hexdigest()[:16]


@pytest.fixture(scope="session")
def desk_dataset():
    CACHE.mkdir(exist_ok=True)
    key = _cache_key("dataset", repr(DESK_RECIPE))
    root = CACHE / f"dataset-{key}"
    meta_path = CACHE / f"dataset-{key}.json"
    if meta_path.exists():
        manifest = ds.load_manifest(root)
        seconds = json.loads(meta_path.read_text())["seconds"]
    else:
        t0 = time.monotonic()
        manifest = ds.build_dataset(DESK_RECIPE, root)
        seconds = time.monotonic() - t0
        meta_path.write_text(json.dumps({"seconds": seconds}))
    return manifest, root, seconds


@pytest.fixture(scope="session")
def desk_model(desk_dataset):
    manifest, root, _ = desk_dataset
    key = _cache_key("model", repr(DESK_RECIPE), repr(TRAIN_CFG),
                     repr(NETWORK), str(INIT_SEED))
    path = CACHE / f"model-{key}.gswt"
    meta_path = CACHE / f"model-{key}.json"
    if meta_path.exists():
        model = dn.load_model(path)
        seconds = json.loads(meta_path.read_text())["seconds"]
    else:
        t0 = time.monotonic()
        model, log = tr.train(manifest, root,
                              dn.DenoiserModel.fresh(NETWORK, INIT_SEED),
                              TRAIN_CFG)
        seconds = time.monotonic() - t0
        dn.save_model(path, model)
        (CACHE / f"model-{key}.log.csv").write_text(tr.training_log_csv(log))
        meta_path.write_text(json.dumps({"seconds": seconds}))
    return model, path, seconds


@pytest.fixture(scope="session")
def jaw_problem():
    mm, geometry, sim = bench.benchmark_scan(0, "gspnp-benefit")
    acq = ds.AcquisitionParams(exposure_mas=bench.BENCH_EXPOSURE_MAS,
                               num_angles=bench.BENCH_VIEWS)
    reference = physics.effective_attenuation_map(mm, acq.acquisition(0).spectrum)
    return geometry, sim, reference


def test_c01_projector_adjoint():
    geometry = FanBeamGeometry.full_scan(300.0, 500.0, 96, 1.0, 48)
    template = ImageGrid.zeros(64, 64, 0.9)
    proj = Projector.for_grid(geometry, template)
    proj.adjoint(proj.forward(np.zeros((64, 64))))  # compile before timing

    gen = rng.generator(11, "acceptance", "adjoint")
    t0 = time.monotonic()
    worst = 0.0
    for _ in range(100):
        u = gen.standard_normal((64, 64))
        v = gen.standard_normal((48, 96))
        au = proj.forward(u)
        atv = proj.adjoint(v)
        gap = abs(np.vdot(au, v) - np.vdot(u, atv))
        worst = max(worst, gap / (np.linalg.norm(au) * np.linalg.norm(v)))
    elapsed = time.monotonic() - t0
    ok = worst < 1e-4 and elapsed < 60.0
    assert _verdict(1, ok, f"max normalized adjoint gap {worst:.3e} over 100 "
                           f"64x64 trials in {elapsed:.1f}s")


def test_c02_gradient_step_identities():
    spec = dn.NetworkSpec(channels=(2, 2), convs_per_level=1)
    t0 = time.monotonic()
    worst_id = 0.0
    worst_fd = 0.0
    for m in range(5):
        params = dict(dn.init_weights(spec, seed=50 + m))
        gen = rng.generator(60 + m, "acceptance", "tail")
        params["tail.w"] = gen.normal(0.0, 0.05, params["tail.w"].shape).astype(np.float32)
        params["tail.b"] = gen.normal(0.0, 0.01, params["tail.b"].shape).astype(np.float32)
        model = dn.DenoiserModel(spec, params)
        for i in range(20):
            xgen = rng.generator(70 + m, "acceptance", "input", i)
            x = 0.06 + 0.04 * xgen.standard_normal((8, 8))

            reval = dn.regularizer(x, model)
            denoised = dn.gradient_step_denoise(x, model)
            gap = np.linalg.norm(denoised - (x - reval.gradient))
            worst_id = max(worst_id, gap / max(np.linalg.norm(x), 1e-30))

            fd = np.zeros_like(x)
            eps = 1e-6
            for r in range(x.shape[0]):
                for c in range(x.shape[1]):
                    hi = x.copy()
                    lo = x.copy()
                    hi[r, c] += eps
                    lo[r, c] -= eps
                    fd[r, c] = (dn.regularizer(hi, model).value
                                - dn.regularizer(lo, model).value) / (2 * eps)
            rel = np.max(np.abs(reval.gradient - fd)) / max(np.max(np.abs(fd)), 1e-12)
            worst_fd = max(worst_fd, rel)
    elapsed = time.monotonic() - t0
    ok = worst_id <= 1e-6 and worst_fd <= 1e-3 and elapsed < 300.0
    assert _verdict(2, ok, f"denoiser-vs-gradient gap {worst_id:.3e} (<=1e-6), "
                           f"finite-difference rel err {worst_fd:.3e} (<=1e-3), "
                           f"5 models x 20 inputs in {elapsed:.1f}s")


def test_c03_photon_noise_moments():
    n = 100_000
    spectrum = physics.build_spectrum(70.0, 0.5)
    table = materials.table_for_spectrum(spectrum)
    paths = np.zeros((table.num_materials, 3))
    paths[1, 1] = 60.0             # one soft ray
    paths[1, 2] = 45.0             # one mixed ray
    paths[2, 2] = 12.0
    comps = physics.polychromatic_components(paths, table, spectrum)
    tiled = np.broadcast_to(comps, (n,) + comps.shape)
    counts = physics.sample_photon_counts(tiled, rng_seed=2024)

    details = []
    ok = True
    for r in range(3):
        mean_true = comps[r].sum()
        se = np.sqrt(mean_true / n)
        mean_hat = counts[:, r].mean()
        var_hat = counts[:, r].var(ddof=1)
        mean_ok = abs(mean_hat - mean_true) <= 3 * se
        var_ok = abs(var_hat - mean_true) <= 0.05 * mean_true
        ok = ok and mean_ok and var_ok
        details.append(f"ray{r}: mean off {abs(mean_hat - mean_true) / se:.2f}se, "
                       f"var off {abs(var_hat - mean_true) / mean_true * 100:.2f}%")
    assert _verdict(3, ok, f"{n} draws/ray; " + "; ".join(details))


def test_c04_fbp_disk_fidelity():
    geometry = FanBeamGeometry.full_scan(300.0, 500.0, 384, 0.5, 360)
    grid = recon.ReconGrid(256, 256, 0.3)
    template = grid.template()
    X, Y = template.pixel_centers()
    radius = 25.0
    mu = 0.02
    disk = ImageGrid.from_array(
        np.where(X**2 + Y**2 <= radius**2, mu, 0.0).astype(np.float32), 0.3)

    t0 = time.monotonic()
    sino = forward_project(disk, geometry)
    image = recon.fbp_reconstruct(sino, geometry, grid)
    elapsed = time.monotonic() - t0

    interior = X**2 + Y**2 <= (0.8 * radius) ** 2
    mean_rec = float(image.as_float64()[interior].mean())
    rel = abs(mean_rec - mu) / mu
    ok = rel <= 0.05 and elapsed < 120.0
    assert _verdict(4, ok, f"interior mean {mean_rec:.5f} vs {mu} "
                           f"({rel * 100:.2f}% off, <=5%), 360 views 256x256 "
                           f"in {elapsed:.1f}s")


def test_c05_truncation_correction():
    # narrow detector: scan FOV radius ~15.3 mm, insert centered at 20 mm
    geometry = FanBeamGeometry.full_scan(300.0, 500.0, 128, 0.4, 360)
    full = ImageGrid.zeros(160, 160, 0.4)
    X, Y = full.pixel_centers()
    values = np.where(X**2 + Y**2 <= 12.0**2, 0.015, 0.0)
    values = np.where((X - 20.0) ** 2 + Y**2 <= 4.0**2, 0.05, values)
    obj = full.with_values(values.astype(np.float32))
    sino = forward_project(obj, geometry)

    fine = recon.ReconGrid(48, 48, 0.4)
    raw = recon.fbp_reconstruct(sino, geometry, fine)
    cfg = recon.TruncationConfig(coarse_size=192, coarse_spacing=0.4,
                                 fine_size=48, fine_spacing=0.4)
    corrected = recon.fbp_reconstruct(
        recon.truncation_correct(sino, geometry, cfg), geometry, fine)

    Xf, Yf = fine.template().pixel_centers()
    roi = Xf**2 + Yf**2 <= 8.0**2
    def roi_rms(img):
        return float(np.sqrt(np.mean((img.as_float64()[roi] - 0.015) ** 2)))
    rms_raw = roi_rms(raw)
    rms_corr = roi_rms(corrected)
    ok = rms_corr < rms_raw
    assert _verdict(5, ok, f"interior RMS error {rms_corr:.5f} corrected vs "
                           f"{rms_raw:.5f} uncorrected (strictly lower)")


def test_c06_dataset_and_training(desk_dataset, desk_model):
    manifest, root, build_s = desk_dataset
    model, _, train_s = desk_model
    n = len(manifest["samples"])
    report = tr.evaluate(model, manifest, root, split="test")
    gain = report.mean_gain_db
    total = build_s + train_s
    crops_ok = 64 <= DESK_RECIPE.patch_size <= 128 and 64 <= TRAIN_CFG.crop_size <= 128
    ok = n >= 200 and crops_ok and gain >= 3.0 and total <= 7200.0
    assert _verdict(6, ok, f"{n} pairs (>=200), test gain {gain:+.2f}dB (>=3), "
                           f"build+train {total / 60:.1f}min (<=120)")


def test_c07_gspnp_benefit(jaw_problem, desk_model):
    geometry, sim, reference = jaw_problem
    model, _, _ = desk_model
    grid = recon.ReconGrid(256, 256, 0.3)
    tau = 1.0 / recon.estimate_lipschitz(geometry, grid, 16)

    t0 = time.monotonic()
    gd = recon.gd_reconstruct(sim.noisy_log, geometry, grid, step=tau,
                              iterations=300)
    t_gd = time.monotonic() - t0

    t0 = time.monotonic()
    zero, _ = pnp.gspnp_reconstruct(sim.noisy_log, geometry, grid,
                                    pnp.GSPnPConfig(lam=0.0, iterations=300,
                                                    step=tau))
    t_zero = time.monotonic() - t0
    bitwise = zero.values.tobytes() == gd.values.tobytes()

    t0 = time.monotonic()
    learned, _ = pnp.gspnp_reconstruct(
        sim.noisy_log, geometry, grid,
        pnp.GSPnPConfig(lam=bench.DEFAULT_LAMBDA, model=model, iterations=300))
    t_pnp = time.monotonic() - t0

    p_gd = tr.psnr(gd, reference)
    p_pnp = tr.psnr(learned, reference)
    slowest = max(t_gd, t_zero, t_pnp)
    ok = bitwise and p_pnp >= p_gd + 2.0 and slowest <= 1800.0
    assert _verdict(7, ok, f"gspnp {p_pnp:.2f}dB vs gd {p_gd:.2f}dB "
                           f"(lam={bench.DEFAULT_LAMBDA:g}, need +2), "
                           f"lam=0 bitwise={bitwise}, slowest run "
                           f"{slowest / 60:.1f}min (<=30)")


def test_c08_lambda_sweep_smoothness(desk_model):
    _, path, _ = desk_model
    out = CACHE / "bench-lambda-sweep"
    report = bench.run_experiment("lambda-sweep", out, model_path=str(path),
                                  seed=0)
    tvs = [report.metrics[f"tv_{i}"] for i in range(3)]
    ok = report.passed
    assert _verdict(8, ok, "total variation "
                    + " > ".join(f"{v:.5g}" for v in tvs)
                    + f" across lam ladder (strict: {ok})")


TINY_DS_CFG = {
    "phantoms": 3, "seed": 40, "phantom_size": 64, "patch_size": 32,
    "patch_stride": 16, "views": 24, "kv": 70.0, "mas": 2.0,
    "fine_size": 32, "fine_spacing": 0.9, "coarse_size": 48,
    "coarse_spacing": 1.5,
}


def _tiny_pipeline(root: Path) -> dict[str, str]:
    root.mkdir(parents=True)
    (root / "ds.json").write_text(json.dumps(TINY_DS_CFG))
    (root / "sim.json").write_text(json.dumps(
        {"geometry": {"num_angles": 24, "detector_pixels": 48,
                      "detector_spacing": 2.0}}))
    steps = [
        ["phantom", "--region", "jaw", "--size", "64", "--spacing", "0.9",
         "--seed", "21", "--out", root / "ph.gsct", "--png", root / "ph.png"],
        ["simulate", "--phantom", root / "ph.gsct", "--config",
         root / "sim.json", "--kv", "70", "--mas", "2.0", "--seed", "5",
         "--spectrum-csv", root / "spectrum.csv",
         "--materials-csv", root / "materials.csv", "--out-dir", root / "sim"],
        ["dataset", "--config", root / "ds.json", "--out", root / "data"],
        ["train", "--dataset", root / "data", "--epochs", "1", "--lr", "0.001",
         "--batch-size", "4", "--crop-size", "16", "--channels", "2,2",
         "--convs-per-level", "1", "--seed", "3", "--init-seed", "1",
         "--log-csv", root / "log.csv", "--out", root / "model.gswt"],
        ["reconstruct", "--algo", "fbp", "--sino", root / "sim" / "noisy.gssg",
         "--grid-size", "32", "--grid-spacing", "0.9", "--out", root / "fbp.gsct"],
        ["denoise", "--model", root / "model.gswt", "--input", root / "fbp.gsct",
         "--out", root / "den.gsct"],
        ["reconstruct", "--algo", "gspnp", "--lambda", "0.05", "--model",
         root / "model.gswt", "--iters", "4", "--sino", root / "sim" / "noisy.gssg",
         "--grid-size", "32", "--grid-spacing", "0.9",
         "--trace", root / "trace.csv", "--out", root / "rec.gsct"],
        ["eval", "--ref", root / "fbp.gsct", "--test", root / "den.gsct",
         "--out", root / "eval.csv"],
        ["export", "--input", root / "rec.gsct", "--low", "0", "--high", "0.15",
         "--out", root / "rec.png"],
    ]
    for argv in steps:
        code = cli.main(["--threads", "1"] + [str(a) for a in argv])
        assert code == 0, f"stage {argv[0]} exited {code}"
    digests = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and not p.name.endswith("run.json"):
            digests[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return digests


def test_c09_byte_reproducibility(tmp_path):
    first = _tiny_pipeline(tmp_path / "a")
    second = _tiny_pipeline(tmp_path / "b")
    same = first == second
    diffs = [k for k in sorted(set(first) | set(second))
             if first.get(k) != second.get(k)]
    ok = same and len(first) >= 10
    assert _verdict(9, ok, f"{len(first)} artifacts across all stages "
                           f"byte-identical on rerun"
                    + (f"; diffs: {diffs[:4]}" if diffs else ""))


def test_c10_objective_descent(desk_model):
    _, path, _ = desk_model
    out = CACHE / "bench-convergence-trace"
    report = bench.run_experiment("convergence-trace", out,
                                  model_path=str(path), seed=0)
    frac = report.metrics["non_increasing_fraction"]
    trace_ok = (out / "trace.csv").exists()
    ok = report.passed and trace_ok
    assert _verdict(10, ok, f"objective non-increasing on {frac * 100:.1f}% of "
                            f"logged steps (>=95), trace.csv written={trace_ok}")
