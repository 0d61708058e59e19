"""Scripted experiments with recorded metrics and ordinal assertions.

Each experiment runs a short pipeline, records a per-row table and a set
of named scalar metrics, renders side-by-side image panels at the shared
display window, and checks a list of assertions.  Assertions compare
recorded metrics against each other (orderings, monotone ladders,
fractions), never against absolute quality numbers, since those depend on
the procedural phantoms and the small network.

A failed assertion does not abort the run: the report (Markdown + CSV +
PNGs) is always written, and the caller decides the exit status from
`report.passed`.  Reports contain no timestamps or durations, so a fixed
seed reproduces them byte for byte.

Registered experiments:

- denoise-panel: evaluates a trained model on a dataset's test split;
  asserts the denoiser improves PSNR on every test sample.
- lambda-sweep: reconstructs one noisy jaw scan at three prior weights;
  asserts output total variation strictly decreases as the weight grows.
- convergence-trace: one full-size reconstruction at the default step;
  asserts the logged objective is non-increasing for at least 95% of
  consecutive logged iterates and publishes the trace CSV.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dataset as ds
from . import denoiser as dn
from . import pnp
from . import recon
from . import rng
from . import training
from .core import ImageGrid
from .errors import ArgumentError
from .fileio import atomic_write_bytes, export_png
from .phantom import PhantomSpec, Region, generate_phantom
from .physics import simulate_acquisition

WINDOW = (0.0, 0.15)

# Desk-scale benchmark acquisition: matches the dataset defaults the models
# are trained against (tube, exposure, scan length).
BENCH_EXPOSURE_MAS = 0.5
BENCH_VIEWS = 360

# Prior-weight ladder: the three relative weights, times one fixed
# rescaling that maps them onto this problem's data-term magnitude.
LAMBDA_LADDER = (15.0, 20.0, 30.0)
LAMBDA_SCALE = 0.01
DEFAULT_LAMBDA = 20.0 * LAMBDA_SCALE

# objective slack: descent is asserted up to accumulated roundoff
DESCENT_SLACK = 1.0e-8


@dataclass(frozen=True)
class MetricAssertion:
    """One ordinal check over recorded metrics.

    kinds: "positive" (metrics[0] > 0), "greater" (metrics[0] >
    metrics[1]), "strictly_decreasing" (each listed metric strictly below
    the previous), "at_least" (metrics[0] >= margin).
    """

    name: str
    kind: str
    metrics: tuple[str, ...]
    margin: float = 0.0

    _KINDS = ("positive", "greater", "strictly_decreasing", "at_least")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ArgumentError(f"unknown assertion kind {self.kind!r}")
        need = {"positive": 1, "greater": 2, "at_least": 1}.get(self.kind)
        if need is not None and len(self.metrics) != need:
            raise ArgumentError(
                f"assertion {self.name!r} ({self.kind}) needs {need} metric(s)"
            )
        if self.kind == "strictly_decreasing" and len(self.metrics) < 2:
            raise ArgumentError(
                f"assertion {self.name!r} needs at least 2 metrics"
            )

    def evaluate(self, metrics: dict[str, float]) -> "AssertionResult":
        values = [metrics[m] for m in self.metrics]
        if self.kind == "positive":
            passed = values[0] > 0.0
            detail = f"{self.metrics[0]} = {values[0]:.10g}"
        elif self.kind == "greater":
            passed = values[0] > values[1]
            detail = (f"{self.metrics[0]} = {values[0]:.10g} vs "
                      f"{self.metrics[1]} = {values[1]:.10g}")
        elif self.kind == "strictly_decreasing":
            passed = all(b < a for a, b in zip(values, values[1:]))
            detail = " > ".join(f"{v:.10g}" for v in values)
        else:  # at_least
            passed = values[0] >= self.margin
            detail = f"{self.metrics[0]} = {values[0]:.10g} (needs >= {self.margin:.10g})"
        return AssertionResult(self.name, bool(passed), detail)


@dataclass(frozen=True)
class AssertionResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class BenchContext:
    out_dir: str
    dataset_dir: str | None
    model_path: str | None
    seed: int

    def require_dataset(self) -> str:
        if not self.dataset_dir:
            raise ArgumentError("this experiment needs --dataset")
        return self.dataset_dir

    def require_model(self) -> dn.DenoiserModel:
        if not self.model_path:
            raise ArgumentError("this experiment needs --model")
        return dn.load_model(self.model_path)


@dataclass(frozen=True)
class BenchResult:
    """What a runner hands back for report rendering."""

    row_columns: tuple[str, ...] = ()
    rows: tuple = ()
    rows_filename: str = "rows.csv"
    metrics: dict = field(default_factory=dict)
    panels: tuple = ()  # (filename, ImageGrid) pairs, rendered at WINDOW


@dataclass(frozen=True)
class ExperimentSpec:
    """Name, stage labels, recorded metric names, and ordinal assertions.

    Assertions may only reference declared metrics; the runner must record
    every declared metric.
    """

    name: str
    stages: tuple[str, ...] = ()
    metrics: tuple[str, ...] = ()
    assertions: tuple[MetricAssertion, ...] = ()
    runner: Callable[[BenchContext], BenchResult] | None = None

    def __post_init__(self):
        declared = set(self.metrics)
        for assertion in self.assertions:
            missing = sorted(set(assertion.metrics) - declared)
            if missing:
                raise ArgumentError(
                    f"assertion {assertion.name!r} references unrecorded "
                    f"metrics: {', '.join(missing)}"
                )


@dataclass(frozen=True)
class ExperimentReport:
    name: str
    metrics: dict
    assertions: tuple[AssertionResult, ...]
    output_paths: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def summary_line(self) -> str:
        n_pass = sum(1 for a in self.assertions if a.passed)
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.name}: {status} "
                f"({n_pass}/{len(self.assertions)} assertions)")


def _csv(columns, rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for value in row:
            if isinstance(value, float):
                cells.append(f"{value:.17g}")
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _panel(images: list[ImageGrid], gap: int = 4) -> ImageGrid:
    """Horizontal side-by-side montage with a bright separator."""
    if not images:
        raise ArgumentError("panel needs at least one image")
    shapes = {im.values.shape for im in images}
    if len(shapes) != 1:
        raise ArgumentError(f"panel images disagree on shape: {shapes}")
    sep = np.full((images[0].values.shape[0], gap), WINDOW[1], np.float32)
    parts = []
    for i, im in enumerate(images):
        if i:
            parts.append(sep)
        parts.append(im.values)
    return ImageGrid.from_array(np.hstack(parts), images[0].spacing)


def _markdown(spec: ExperimentSpec, metrics: dict,
              assertions: tuple[AssertionResult, ...], seed: int,
              files: list[str]) -> str:
    lines = [f"# Experiment: {spec.name}", ""]
    if spec.stages:
        lines += ["Stages: " + " -> ".join(spec.stages), ""]
    lines += [f"Seed: {seed}", ""]
    lines += ["## Metrics", ""]
    if metrics:
        lines += ["| metric | value |", "| --- | --- |"]
        for key in sorted(metrics):
            lines.append(f"| {key} | {metrics[key]:.10g} |")
    else:
        lines.append("(none)")
    lines += ["", "## Assertions", ""]
    if assertions:
        lines += ["| assertion | outcome | detail |", "| --- | --- | --- |"]
        for a in assertions:
            outcome = "PASS" if a.passed else "FAIL"
            lines.append(f"| {a.name} | {outcome} | {a.detail} |")
    else:
        lines.append("(none)")
    lines += ["", "## Files", ""]
    for name in files:
        lines.append(f"- {name}")
    if not files:
        lines.append("(none)")
    return "\n".join(lines) + "\n"


def run_experiment_spec(spec: ExperimentSpec, out_dir,
                        dataset_dir=None, model_path=None,
                        seed: int = 0) -> ExperimentReport:
    """Run one experiment and write report.md, CSV table, and panels.

    The report is written even when assertions fail; only precondition
    errors (missing inputs, bad arguments) abort before writing.
    """
    os.makedirs(out_dir, exist_ok=True)
    ctx = BenchContext(out_dir=os.fspath(out_dir), dataset_dir=dataset_dir,
                       model_path=model_path, seed=seed)
    result = spec.runner(ctx) if spec.runner is not None else BenchResult()

    missing = sorted(set(spec.metrics) - set(result.metrics))
    if missing:
        raise ArgumentError(
            f"experiment {spec.name!r} did not record metrics: {', '.join(missing)}"
        )

    outputs = []

    def put(name: str, payload: str) -> None:
        path = os.path.join(ctx.out_dir, name)
        atomic_write_bytes(path, payload.encode("utf-8"))
        outputs.append(path)

    if result.rows:
        put(result.rows_filename, _csv(result.row_columns, result.rows))
    for name, image in result.panels:
        path = os.path.join(ctx.out_dir, name)
        export_png(image, WINDOW[0], WINDOW[1], path)
        outputs.append(path)
    put("metrics.csv", _csv(("metric", "value"),
                            [(k, float(result.metrics[k]))
                             for k in sorted(result.metrics)]))

    assertions = tuple(a.evaluate(result.metrics) for a in spec.assertions)
    report_files = [os.path.basename(p) for p in outputs]
    put("report.md", _markdown(spec, result.metrics, assertions, seed,
                               report_files))
    return ExperimentReport(name=spec.name, metrics=dict(result.metrics),
                            assertions=assertions,
                            output_paths=tuple(outputs))


# ---------------------------------------------------------------------------
# experiment runners


def benchmark_scan(seed: int, label: str):
    """Noisy jaw-region scan shared by the reconstruction experiments."""
    acq = ds.AcquisitionParams(exposure_mas=BENCH_EXPOSURE_MAS,
                               num_angles=BENCH_VIEWS)
    spec = PhantomSpec(region=Region.JAW, size=256, spacing=0.3, seed=seed)
    mm = generate_phantom(spec)
    sim = simulate_acquisition(mm, acq.acquisition(
        rng.derive_key(seed, "bench", label)))
    return mm, acq.geometry(), sim


def _run_denoise_panel(ctx: BenchContext) -> BenchResult:
    dataset_dir = ctx.require_dataset()
    model = ctx.require_model()
    manifest = ds.load_manifest(dataset_dir)
    report = training.evaluate(model, manifest, dataset_dir, split="test")

    rows = tuple((r["id"], float(r["noisy_psnr"]), float(r["denoised_psnr"]))
                 for r in report.rows)
    gains = [r[2] - r[1] for r in rows]
    metrics = {
        "mean_noisy_psnr": report.mean_noisy_psnr,
        "mean_denoised_psnr": report.mean_denoised_psnr,
        "mean_gain_db": report.mean_gain_db,
        "min_gain_db": min(gains),
    }

    first = ds.manifest_samples(manifest, "test")[0]
    noisy, clean = ds.load_pair(dataset_dir, first)
    denoised = dn.gradient_step_denoise(noisy, model)
    panel = _panel([noisy, denoised, clean])
    return BenchResult(
        row_columns=("id", "noisy_psnr", "denoised_psnr"),
        rows=rows,
        metrics=metrics,
        panels=(("panel_noisy_denoised_clean.png", panel),),
    )


def _run_lambda_sweep(ctx: BenchContext) -> BenchResult:
    model = ctx.require_model()
    _, geometry, sim = benchmark_scan(ctx.seed, "lambda-sweep")
    grid = recon.ReconGrid(128, 128, 0.6)

    rows = []
    metrics = {}
    images = []
    for i, weight in enumerate(LAMBDA_LADDER):
        lam = weight * LAMBDA_SCALE
        cfg = pnp.GSPnPConfig(lam=lam, model=model, iterations=200)
        image, _ = pnp.gspnp_reconstruct(sim.noisy_log, geometry, grid, cfg)
        tv = pnp.total_variation(image)
        rows.append((lam, tv))
        metrics[f"lam_{i}"] = lam
        metrics[f"tv_{i}"] = tv
        images.append(image)

    panel = _panel(images)
    return BenchResult(
        row_columns=("lam", "total_variation"),
        rows=tuple(rows),
        metrics=metrics,
        panels=(("panel_lambda_sweep.png", panel),),
    )


def _run_convergence_trace(ctx: BenchContext) -> BenchResult:
    model = ctx.require_model()
    _, geometry, sim = benchmark_scan(ctx.seed, "convergence-trace")
    grid = recon.ReconGrid(256, 256, 0.3)

    cfg = pnp.GSPnPConfig(lam=DEFAULT_LAMBDA, model=model, iterations=300)
    image, trace = pnp.gspnp_reconstruct(sim.noisy_log, geometry, grid, cfg)

    objectives = [row["objective"] for row in trace]
    pairs = list(zip(objectives, objectives[1:]))
    good = sum(1 for a, b in pairs if b <= a + DESCENT_SLACK)
    fraction = good / len(pairs) if pairs else 1.0

    fbp = recon.fbp_reconstruct(sim.noisy_log, geometry, grid)
    panel = _panel([fbp, image])
    rows = tuple((r["iteration"], r["data_term"], r["prior_term"],
                  r["objective"]) for r in trace)
    metrics = {
        "logged_rows": float(len(trace)),
        "non_increasing_fraction": fraction,
        "first_objective": objectives[0],
        "final_objective": objectives[-1],
    }
    return BenchResult(
        row_columns=pnp.TRACE_COLUMNS,
        rows=rows,
        rows_filename="trace.csv",
        metrics=metrics,
        panels=(("panel_fbp_vs_learned.png", panel),),
    )


REGISTRY: dict[str, ExperimentSpec] = {
    spec.name: spec
    for spec in (
        ExperimentSpec(
            name="denoise-panel",
            stages=("load dataset", "evaluate model on test split",
                    "render panel"),
            metrics=("mean_noisy_psnr", "mean_denoised_psnr", "mean_gain_db",
                     "min_gain_db"),
            assertions=(
                MetricAssertion("every test sample improves", "positive",
                                ("min_gain_db",)),
                MetricAssertion("mean improves", "greater",
                                ("mean_denoised_psnr", "mean_noisy_psnr")),
            ),
            runner=_run_denoise_panel,
        ),
        ExperimentSpec(
            name="lambda-sweep",
            stages=("generate jaw phantom", "simulate noisy scan",
                    "reconstruct at three prior weights",
                    "measure total variation"),
            metrics=("lam_0", "lam_1", "lam_2", "tv_0", "tv_1", "tv_2"),
            assertions=(
                MetricAssertion("higher weight is smoother",
                                "strictly_decreasing",
                                ("tv_0", "tv_1", "tv_2")),
            ),
            runner=_run_lambda_sweep,
        ),
        ExperimentSpec(
            name="convergence-trace",
            stages=("generate jaw phantom", "simulate noisy scan",
                    "reconstruct at the default step", "log objective"),
            metrics=("logged_rows", "non_increasing_fraction",
                     "first_objective", "final_objective"),
            assertions=(
                MetricAssertion("objective non-increasing on >=95% of "
                                "logged steps", "at_least",
                                ("non_increasing_fraction",), margin=0.95),
            ),
            runner=_run_convergence_trace,
        ),
    )
}


def list_experiments() -> list[str]:
    return sorted(REGISTRY)


def run_experiment(name: str, out_dir, dataset_dir=None, model_path=None,
                   seed: int = 0) -> ExperimentReport:
    """Look up a registered experiment and run it."""
    if name not in REGISTRY:
        known = ", ".join(list_experiments())
        raise ArgumentError(f"unknown experiment {name!r} (known: {known})")
    return run_experiment_spec(REGISTRY[name], out_dir,
                               dataset_dir=dataset_dir,
                               model_path=model_path, seed=seed)
