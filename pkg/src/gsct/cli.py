"""Command line interface chaining every pipeline stage.

Subcommands: phantom, simulate, dataset, train, denoise, reconstruct,
eval, export, bench.  Shared conventions:

- configuration precedence is explicit flags > --config JSON file >
  built-in defaults; the fully resolved snapshot is recorded in the run
  manifest, which is the reference for reproducing a run
- every invocation emits exactly one run manifest next to its outputs
  (<output>.run.json for single-file outputs, <dir>/run.json for
  directory outputs)
- each command takes one --seed; stages derive independent sub-streams
  from it by hashing the seed together with a stage label (rng module)
- exit codes: 0 success, 2 argument errors, 3 IO and format errors, 4
  numerical failures; every failure prints one "TAG: message" line to
  stderr
- --threads (or the GSPNP_THREADS environment variable) caps compiled-
  kernel parallelism; outputs never depend on it
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import __version__
from . import dataset as ds
from . import denoiser as dn
from . import pnp
from . import recon
from . import training
from .bench import list_experiments, run_experiment
from .core import FanBeamGeometry
from .errors import ArgumentError, FormatError, GsctError, IoError
from .fileio import (
    atomic_write_bytes,
    export_png,
    read_image,
    read_sinogram,
    write_image,
    write_sinogram,
)
from .manifest import write_run_manifest
from .materials import table_from_json, table_to_csv, table_to_json
from .phantom import PhantomSpec, Region, generate_phantom
from .physics import AcquisitionConfig, MaterialMap, simulate_acquisition, spectrum_to_csv

_WINDOW = (0.0, 0.15)  # display window in mm^-1, shared by all PNG exports


class _Parser(argparse.ArgumentParser):
    """argparse that reports errors through the shared taxonomy."""

    def error(self, message):
        raise ArgumentError(message)


def _load_json_file(path) -> dict:
    try:
        with open(path, "rb") as f:
            doc = json.loads(f.read().decode("utf-8"))
    except FileNotFoundError as exc:
        raise IoError(f"file not found: {path}", tag="IO_NOT_FOUND") from exc
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable JSON file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"config file {path} must hold a JSON object")
    return doc


def _resolve(defaults: dict, config_path, overrides: dict) -> dict:
    """flags > config file > defaults; rejects unknown config keys."""
    resolved = dict(defaults)
    if config_path is not None:
        doc = _load_json_file(config_path)
        unknown = sorted(set(doc) - set(defaults))
        if unknown:
            raise ArgumentError(
                f"unknown config keys in {config_path}: {', '.join(unknown)}"
            )
        resolved.update(doc)
    for key, value in overrides.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _finish(args, command: str, config: dict, inputs, outputs,
            manifest_path, t0: float) -> None:
    write_run_manifest(
        manifest_path,
        command=command,
        argv=list(args.cli_argv),
        config=config,
        inputs=inputs,
        outputs=outputs,
        duration_seconds=time.monotonic() - t0,
    )


def _region(name: str) -> Region:
    try:
        return Region[name.upper()]
    except KeyError:
        valid = ", ".join(r.name.lower() for r in Region)
        raise ArgumentError(f"unknown region {name!r} (choose from {valid})")


def _load_model(path) -> dn.DenoiserModel:
    return dn.load_model(path)


def _parse_channels(text: str) -> tuple[int, ...]:
    try:
        channels = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ArgumentError(f"cannot parse channel list {text!r}")
    if not channels:
        raise ArgumentError("channel list is empty")
    return channels


def configure_threads(requested: int | None) -> int:
    """Cap compiled-kernel parallelism; returns the effective cap.

    Falls back to the GSPNP_THREADS environment variable, then to the
    core count.  The compute kernels are deterministic regardless of the
    cap, so this only trades wall-clock time.
    """
    n = requested
    if n is None:
        env = os.environ.get("GSPNP_THREADS")
        if env is not None:
            try:
                n = int(env)
            except ValueError:
                raise ArgumentError(f"GSPNP_THREADS must be an integer, got {env!r}")
    if n is None:
        n = os.cpu_count() or 1
    if n < 1:
        raise ArgumentError("thread cap must be >= 1")
    try:
        import warnings

        with warnings.catch_warnings():
            # threading-layer probing may warn about unrelated backends;
            # keep stderr to the one-line error contract
            warnings.simplefilter("ignore")
            import numba

            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass
    return n


# ---------------------------------------------------------------------------
# subcommands


def cmd_phantom(args) -> None:
    t0 = time.monotonic()
    config = {
        "region": args.region,
        "size": args.size,
        "spacing": args.spacing,
        "seed": args.seed,
    }
    spec = PhantomSpec(region=_region(args.region), size=args.size,
                       spacing=args.spacing, seed=args.seed)
    mm = generate_phantom(spec)
    write_image(mm.to_image(), args.out)
    sidecar = str(args.out) + ".materials.json"
    _write_text(sidecar, json.dumps(table_to_json(mm.table), indent=1,
                                    sort_keys=True) + "\n")
    outputs = [args.out, sidecar]
    if args.png:
        # index image: window over the index range so all materials show
        export_png(mm.to_image(), 0.0, float(mm.table.num_materials - 1), args.png)
        outputs.append(args.png)
    _finish(args, "phantom", config, [], outputs, str(args.out) + ".run.json", t0)


_SIM_DEFAULTS = {
    "kv": 90.0,
    "mas": 12.5,
    "seed": 0,
    "noise": True,
    "geometry": {
        "num_angles": 360,
        "detector_pixels": 384,
        "detector_spacing": 0.5,
        "source_to_isocenter": 300.0,
        "source_to_detector": 500.0,
    },
}


def cmd_simulate(args) -> None:
    t0 = time.monotonic()
    defaults = dict(_SIM_DEFAULTS)
    defaults["geometry"] = dict(_SIM_DEFAULTS["geometry"])
    config = _resolve(defaults, args.config, {
        "kv": args.kv,
        "mas": args.mas,
        "seed": args.seed,
        "noise": args.noise,
    })
    if not isinstance(config["geometry"], dict):
        raise FormatError("config key 'geometry' must be an object")
    geo_cfg = dict(_SIM_DEFAULTS["geometry"])
    unknown = sorted(set(config["geometry"]) - set(geo_cfg))
    if unknown:
        raise ArgumentError(f"unknown geometry keys: {', '.join(unknown)}")
    geo_cfg.update(config["geometry"])
    flag_geo = {
        "num_angles": args.views,
        "detector_pixels": args.detector_pixels,
        "detector_spacing": args.detector_spacing,
        "source_to_isocenter": args.sid,
        "source_to_detector": args.sdd,
    }
    geo_cfg.update({k: v for k, v in flag_geo.items() if v is not None})
    config["geometry"] = geo_cfg

    geometry = FanBeamGeometry.full_scan(**geo_cfg)
    index_image = read_image(args.phantom)
    sidecar = args.materials or str(args.phantom) + ".materials.json"
    table = table_from_json(_load_json_file(sidecar))
    mm = MaterialMap.from_image(index_image, table)

    acq = AcquisitionConfig.create(
        geometry=geometry,
        tube_voltage=float(config["kv"]),
        exposure=float(config["mas"]),
        noise_enabled=bool(config["noise"]),
        rng_seed=int(config["seed"]),
    )
    sim = simulate_acquisition(mm, acq)

    os.makedirs(args.out_dir, exist_ok=True)
    inputs = [args.phantom, sidecar]
    outputs = []

    def put(name, sino):
        path = os.path.join(args.out_dir, name)
        write_sinogram(sino, path)
        outputs.append(path)

    put("clean.gssg", sim.clean_log)
    put("clean_intensity.gssg", sim.clean_intensity)
    if sim.noisy_log is not None:
        put("noisy.gssg", sim.noisy_log)
        put("noisy_intensity.gssg", sim.noisy_intensity)
    if args.spectrum_csv:
        _write_text(args.spectrum_csv, spectrum_to_csv(acq.spectrum))
        outputs.append(args.spectrum_csv)
    if args.materials_csv:
        _write_text(args.materials_csv, table_to_csv(table))
        outputs.append(args.materials_csv)
    _finish(args, "simulate", config, inputs, outputs,
            os.path.join(args.out_dir, "run.json"), t0)


_DATASET_DEFAULTS = {
    "phantoms": 36,
    "seed": 100,
    "noise_seed": 2024,
    "phantom_size": 256,
    "phantom_spacing": 0.3,
    "patch_size": 128,
    "patch_stride": 64,
    "views": 360,
    "kv": 90.0,
    "mas": 12.5,
    "fine_size": 96,
    "fine_spacing": 0.3,
    "coarse_size": 160,
    "coarse_spacing": 0.45,
}


def cmd_dataset(args) -> None:
    t0 = time.monotonic()
    config = _resolve(_DATASET_DEFAULTS, args.config, {
        "phantoms": args.phantoms,
        "seed": args.seed,
        "noise_seed": args.noise_seed,
        "phantom_size": args.phantom_size,
        "patch_size": args.patch_size,
        "patch_stride": args.patch_stride,
        "views": args.views,
        "kv": args.kv,
        "mas": args.mas,
    })
    recipe = ds.DatasetRecipe(
        num_phantoms=int(config["phantoms"]),
        base_seed=int(config["seed"]),
        noise_seed=int(config["noise_seed"]),
        phantom_size=int(config["phantom_size"]),
        phantom_spacing=float(config["phantom_spacing"]),
        patch_size=int(config["patch_size"]),
        patch_stride=int(config["patch_stride"]),
        acquisition=ds.AcquisitionParams(
            tube_voltage_kv=float(config["kv"]),
            exposure_mas=float(config["mas"]),
            num_angles=int(config["views"]),
        ),
        recon=ds.ReconParams(
            fine_size=int(config["fine_size"]),
            fine_spacing=float(config["fine_spacing"]),
            coarse_size=int(config["coarse_size"]),
            coarse_spacing=float(config["coarse_spacing"]),
        ),
    )
    manifest = ds.build_dataset(recipe, args.out)
    outputs = [os.path.join(args.out, ds.MANIFEST_NAME)]
    for row in manifest["samples"]:
        outputs.append(os.path.join(args.out, row["noisy"]))
        outputs.append(os.path.join(args.out, row["clean"]))
    _finish(args, "dataset", config, [], outputs,
            os.path.join(args.out, "run.json"), t0)


_TRAIN_DEFAULTS = {
    "epochs": 63,
    "lr": 5e-5,
    "batch_size": 8,
    "crop_size": 64,
    "seed": 0,
    "init_seed": 0,
    "channels": "16,32",
    "convs_per_level": 2,
    "kernel_size": 3,
    "beta": 10.0,
    "loss_target": "denoised",
}


def cmd_train(args) -> None:
    t0 = time.monotonic()
    config = _resolve(_TRAIN_DEFAULTS, args.config, {
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "crop_size": args.crop_size,
        "seed": args.seed,
        "init_seed": args.init_seed,
        "channels": args.channels,
        "convs_per_level": args.convs_per_level,
        "kernel_size": args.kernel_size,
        "beta": args.beta,
        "loss_target": args.loss_target,
    })
    manifest = ds.load_manifest(args.dataset)
    spec = dn.NetworkSpec(
        channels=_parse_channels(str(config["channels"])),
        convs_per_level=int(config["convs_per_level"]),
        kernel_size=int(config["kernel_size"]),
        beta=float(config["beta"]),
    )
    model = dn.DenoiserModel(spec, dn.init_weights(spec, int(config["init_seed"])))
    cfg = training.TrainConfig(
        epochs=int(config["epochs"]),
        learning_rate=float(config["lr"]),
        batch_size=int(config["batch_size"]),
        crop_size=int(config["crop_size"]),
        rng_seed=int(config["seed"]),
        loss_target=str(config["loss_target"]),
    )
    trained, log = training.train(manifest, args.dataset, model, cfg)
    dn.save_model(args.out, trained)
    inputs = [os.path.join(args.dataset, ds.MANIFEST_NAME)]
    outputs = [args.out]
    if args.log_csv:
        _write_text(args.log_csv, training.training_log_csv(log))
        outputs.append(args.log_csv)
    _finish(args, "train", config, inputs, outputs, str(args.out) + ".run.json", t0)


def cmd_denoise(args) -> None:
    t0 = time.monotonic()
    config = {"model": str(args.model), "mode": args.mode}
    model = _load_model(args.model)
    image = read_image(args.input)
    if args.mode == "denoised":
        result = dn.gradient_step_denoise(image, model)
    else:
        result = dn.network_forward(image, model)
    write_image(result, args.out)
    outputs = [args.out]
    if args.png:
        export_png(result, *_WINDOW, args.png)
        outputs.append(args.png)
    _finish(args, "denoise", config, [args.model, args.input], outputs,
            str(args.out) + ".run.json", t0)


_RECON_ITER_DEFAULTS = {"cg": 20, "gd": 100, "gspnp": 1500, "tv": 20, "apgd": 1500}


def cmd_reconstruct(args) -> None:
    t0 = time.monotonic()
    if args.trace and args.algo != "gspnp":
        raise ArgumentError("--trace is only available with --algo gspnp")
    sino = read_sinogram(args.sino)
    geometry = sino.geometry
    grid = recon.ReconGrid(args.grid_size, args.grid_size, args.grid_spacing)
    inputs = [args.sino]

    iters = args.iters
    if iters is None:
        iters = _RECON_ITER_DEFAULTS.get(args.algo)
    config = {
        "algo": args.algo,
        "grid_size": args.grid_size,
        "grid_spacing": args.grid_spacing,
        "iters": iters,
        "tau": args.tau,
        "lam": args.lam,
        "alpha": args.alpha,
        "power_iters": args.power_iters,
        "truncate": bool(args.truncate),
        "model": str(args.model) if args.model else None,
    }

    if args.truncate:
        tcfg = recon.TruncationConfig(
            coarse_size=args.coarse_size,
            coarse_spacing=args.coarse_spacing,
            fine_size=args.grid_size,
            fine_spacing=args.grid_spacing,
            feather_pixels=args.feather,
        )
        config["coarse_size"] = args.coarse_size
        config["coarse_spacing"] = args.coarse_spacing
        sino = recon.truncation_correct(sino, geometry, tcfg)

    trace = None
    if args.algo == "fbp":
        image = recon.fbp_reconstruct(sino, geometry, grid)
    elif args.algo == "cg":
        image = recon.cg_reconstruct(sino, geometry, grid, iterations=iters)
    elif args.algo == "gd":
        tau = args.tau
        if tau is None:
            tau = 1.0 / recon.estimate_lipschitz(geometry, grid, args.power_iters)
        config["tau"] = tau
        image = recon.gd_reconstruct(sino, geometry, grid, step=tau, iterations=iters)
    elif args.algo == "gspnp":
        if args.lam is None:
            raise ArgumentError("gspnp needs --lambda")
        model = _load_model(args.model) if args.model else None
        if args.model:
            inputs.append(args.model)
        cfg = pnp.GSPnPConfig(lam=args.lam, model=model, iterations=iters,
                              step=args.tau, power_iterations=args.power_iters)
        image, trace = pnp.gspnp_reconstruct(sino, geometry, grid, cfg)
    elif args.algo == "tv":
        lam = args.lam if args.lam is not None else 0.05
        config["lam"] = lam
        cfg = pnp.TVConfig(lam=lam, iterations=iters,
                           prox_iterations=args.prox_iters, step=args.tau,
                           power_iterations=args.power_iters)
        image = pnp.tv_pgd_reconstruct(sino, geometry, grid, cfg)
    elif args.algo == "apgd":
        if not args.model:
            raise ArgumentError("apgd needs --model")
        model = _load_model(args.model)
        inputs.append(args.model)
        alpha = args.alpha if args.alpha is not None else 0.004
        config["alpha"] = alpha
        cfg = pnp.AlphaPGDConfig(model=model, alpha=alpha, iterations=iters,
                                 step=args.tau, power_iterations=args.power_iters)
        image = pnp.alpha_pgd_reconstruct(sino, geometry, grid, cfg)
    else:  # pragma: no cover - argparse choices guard this
        raise ArgumentError(f"unknown algorithm {args.algo!r}")

    write_image(image, args.out)
    outputs = [args.out]
    if args.trace and trace is not None:
        _write_text(args.trace, pnp.objective_trace(trace))
        outputs.append(args.trace)
    if args.png:
        export_png(image, *_WINDOW, args.png)
        outputs.append(args.png)
    _finish(args, "reconstruct", config, inputs, outputs,
            str(args.out) + ".run.json", t0)


def cmd_eval(args) -> None:
    t0 = time.monotonic()
    if args.dataset or args.model:
        if not (args.dataset and args.model):
            raise ArgumentError("dataset evaluation needs both --dataset and --model")
        if args.ref or args.test:
            raise ArgumentError("--ref/--test cannot be combined with --dataset")
        config = {"mode": "dataset", "split": args.split,
                  "data_range": args.data_range, "model": str(args.model)}
        manifest = ds.load_manifest(args.dataset)
        model = _load_model(args.model)
        report = training.evaluate(model, manifest, args.dataset,
                                   split=args.split, data_range=args.data_range)
        _write_text(args.out, report.to_csv())
        sys.stdout.write(
            f"split={report.split} n={len(report.rows)} "
            f"noisy={report.mean_noisy_psnr:.2f}dB "
            f"denoised={report.mean_denoised_psnr:.2f}dB "
            f"gain={report.mean_gain_db:+.2f}dB\n"
        )
        inputs = [os.path.join(args.dataset, ds.MANIFEST_NAME), args.model]
    else:
        if not args.ref or not args.test:
            raise ArgumentError("eval needs --ref and --test (or --dataset/--model)")
        if len(args.ref) != len(args.test):
            raise ArgumentError("--ref and --test must pair up one to one")
        config = {"mode": "files", "data_range": args.data_range}
        lines = ["test,ref,psnr_db"]
        for ref_path, test_path in zip(args.ref, args.test):
            ref = read_image(ref_path)
            test = read_image(test_path)
            if ref.values.shape != test.values.shape:
                raise ArgumentError(
                    f"shape mismatch: {test_path} {test.values.shape} vs "
                    f"{ref_path} {ref.values.shape}"
                )
            value = training.psnr(test, ref, data_range=args.data_range)
            lines.append(f"{test_path},{ref_path},{value:.6g}")
            sys.stdout.write(f"{test_path}: {value:.6g} dB\n")
        _write_text(args.out, "\n".join(lines) + "\n")
        inputs = list(args.ref) + list(args.test)
    _finish(args, "eval", config, inputs, [args.out], str(args.out) + ".run.json", t0)


def cmd_export(args) -> None:
    t0 = time.monotonic()
    config = {"low": args.low, "high": args.high}
    image = read_image(args.input)
    export_png(image, args.low, args.high, args.out)
    _finish(args, "export", config, [args.input], [args.out],
            str(args.out) + ".run.json", t0)


class BenchAssertionError(GsctError):
    """Failed bench assertion: the report is still written, exit nonzero."""

    exit_code = 4
    tag = "BENCH_ASSERTION"


def cmd_bench(args) -> None:
    t0 = time.monotonic()
    if args.bench_command == "list":
        for name in list_experiments():
            sys.stdout.write(name + "\n")
        return
    config = {
        "experiment": args.name,
        "seed": args.seed,
        "dataset": str(args.dataset) if args.dataset else None,
        "model": str(args.model) if args.model else None,
    }
    report = run_experiment(args.name, args.out, dataset_dir=args.dataset,
                            model_path=args.model, seed=args.seed)
    _finish(args, "bench", config, [], report.output_paths,
            os.path.join(args.out, "run.json"), t0)
    sys.stdout.write(report.summary_line() + "\n")
    if not report.passed:
        failed = ", ".join(a.name for a in report.assertions if not a.passed)
        raise BenchAssertionError(f"failed assertions: {failed}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gsct", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"gsct {__version__}")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap compiled-kernel parallelism (default: "
                             "GSPNP_THREADS or all cores)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("phantom", help="generate a procedural material map")
    p.add_argument("--region", default="head", choices=["jaw", "head", "torso"])
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--spacing", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--png", default=None)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="simulate a noisy polychromatic scan")
    p.add_argument("--phantom", required=True, help="material index image (GSCT)")
    p.add_argument("--materials", default=None,
                   help="material table sidecar (default: <phantom>.materials.json)")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--kv", type=float, default=None)
    p.add_argument("--mas", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--views", type=int, default=None)
    p.add_argument("--detector-pixels", type=int, default=None)
    p.add_argument("--detector-spacing", type=float, default=None)
    p.add_argument("--sid", type=float, default=None,
                   help="source to isocenter distance (mm)")
    p.add_argument("--sdd", type=float, default=None,
                   help="source to detector distance (mm)")
    p.add_argument("--spectrum-csv", default=None)
    p.add_argument("--materials-csv", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="build a paired denoising dataset")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--phantoms", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise-seed", type=int, default=None)
    p.add_argument("--phantom-size", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--patch-stride", type=int, default=None)
    p.add_argument("--views", type=int, default=None)
    p.add_argument("--kv", type=float, default=None)
    p.add_argument("--mas", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the denoiser on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--crop-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--init-seed", type=int, default=None)
    p.add_argument("--channels", default=None, help="comma list, e.g. 16,32")
    p.add_argument("--convs-per-level", type=int, default=None)
    p.add_argument("--kernel-size", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--loss-target", choices=["denoised", "network"], default=None)
    p.add_argument("--log-csv", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="apply the denoiser to one image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=["denoised", "network"], default="denoised")
    p.add_argument("--out", required=True)
    p.add_argument("--png", default=None)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("reconstruct", help="reconstruct an image from a sinogram")
    p.add_argument("--algo", required=True,
                   choices=["fbp", "cg", "gd", "gspnp", "tv", "apgd"])
    p.add_argument("--sino", required=True)
    p.add_argument("--grid-size", type=int, default=256)
    p.add_argument("--grid-spacing", type=float, default=0.3)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--tau", type=float, default=None, help="step size")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="prior weight")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--prox-iters", type=int, default=20)
    p.add_argument("--power-iters", type=int, default=16)
    p.add_argument("--model", default=None)
    p.add_argument("--truncate", action="store_true",
                   help="correct for out-of-FOV signal before reconstructing")
    p.add_argument("--coarse-size", type=int, default=592)
    p.add_argument("--coarse-spacing", type=float, default=0.4)
    p.add_argument("--feather", type=float, default=2.0)
    p.add_argument("--trace", default=None, help="objective trace CSV (gspnp)")
    p.add_argument("--out", required=True)
    p.add_argument("--png", default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="PSNR report for files or a dataset split")
    p.add_argument("--ref", action="append", default=None)
    p.add_argument("--test", action="append", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--split", default="test", choices=list(ds.SPLITS))
    p.add_argument("--data-range", type=float, default=0.15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="export a GSCT image to windowed PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--low", type=float, default=_WINDOW[0])
    p.add_argument("--high", type=float, default=_WINDOW[1])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("bench", help="run a scripted acceptance experiment")
    bsub = p.add_subparsers(dest="bench_command", required=True, metavar="ACTION")
    b = bsub.add_parser("run")
    b.add_argument("name")
    b.add_argument("--out", required=True)
    b.add_argument("--dataset", default=None)
    b.add_argument("--model", default=None)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    b = bsub.add_parser("list")
    b.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.cli_argv = list(argv)
        configure_threads(args.threads)
        args.func(args)
    except GsctError as exc:
        sys.stderr.write(exc.one_line() + "\n")
        return exc.exit_code
    return 0
