"""Bench harness: assertion kinds, report rendering, registry contracts."""

import numpy as np
import pytest

from gsct import bench, cli
from gsct.bench import (BenchContext, BenchResult, ExperimentReport,
                        ExperimentSpec, MetricAssertion, run_experiment,
                        run_experiment_spec)
from gsct.core import ImageGrid
from gsct.errors import ArgumentError


def _image(seed, size=8):
    gen = np.random.default_rng(seed)
    return ImageGrid.from_array(
        (0.15 * gen.random((size, size))).astype(np.float32), spacing=0.3
    )


def _toy_runner(ctx):
    gen = np.random.default_rng(ctx.seed)
    value = float(gen.random())
    return BenchResult(
        row_columns=("step", "value"),
        rows=((0, value), (1, value / 2.0)),
        metrics={"m_high": 1.0 + value, "m_low": value},
        panels=(("panel.png", _image(ctx.seed)),),
    )


TOY_SPEC = ExperimentSpec(
    name="unit-toy",
    stages=("one", "two"),
    metrics=("m_high", "m_low"),
    assertions=(
        MetricAssertion("high beats low", "greater", ("m_high", "m_low")),
        MetricAssertion("low positive", "positive", ("m_low",)),
    ),
    runner=_toy_runner,
)


class TestMetricAssertion:
    def test_kind_validation(self):
        with pytest.raises(ArgumentError):
            MetricAssertion("x", "monotone", ("a",))
        with pytest.raises(ArgumentError):
            MetricAssertion("x", "positive", ("a", "b"))
        with pytest.raises(ArgumentError):
            MetricAssertion("x", "greater", ("a",))
        with pytest.raises(ArgumentError):
            MetricAssertion("x", "at_least", ())
        with pytest.raises(ArgumentError):
            MetricAssertion("x", "strictly_decreasing", ("a",))

    def test_positive(self):
        check = MetricAssertion("x", "positive", ("a",))
        assert check.evaluate({"a": 0.5}).passed
        assert not check.evaluate({"a": 0.0}).passed

    def test_greater(self):
        check = MetricAssertion("x", "greater", ("a", "b"))
        assert check.evaluate({"a": 2.0, "b": 1.0}).passed
        assert not check.evaluate({"a": 1.0, "b": 1.0}).passed

    def test_strictly_decreasing(self):
        check = MetricAssertion("x", "strictly_decreasing", ("a", "b", "c"))
        assert check.evaluate({"a": 3.0, "b": 2.0, "c": 1.0}).passed
        assert not check.evaluate({"a": 3.0, "b": 3.0, "c": 1.0}).passed
        assert not check.evaluate({"a": 3.0, "b": 4.0, "c": 1.0}).passed

    def test_at_least(self):
        check = MetricAssertion("x", "at_least", ("a",), margin=0.95)
        assert check.evaluate({"a": 0.95}).passed
        assert not check.evaluate({"a": 0.9499}).passed

    def test_detail_strings(self):
        res = MetricAssertion("x", "greater", ("a", "b")).evaluate({"a": 2.0, "b": 1.0})
        assert "a = 2" in res.detail and "b = 1" in res.detail


class TestExperimentSpec:
    def test_assertions_must_reference_declared_metrics(self):
        with pytest.raises(ArgumentError, match="unrecorded"):
            ExperimentSpec(
                name="bad",
                metrics=("known",),
                assertions=(MetricAssertion("x", "positive", ("unknown",)),),
            )

    def test_registry_contract(self):
        assert bench.list_experiments() == sorted(bench.REGISTRY)
        assert set(bench.list_experiments()) == {
            "denoise-panel", "lambda-sweep", "convergence-trace",
        }
        for name, spec in bench.REGISTRY.items():
            assert spec.name == name
            assert spec.runner is not None


class TestContext:
    def test_missing_inputs_raise(self):
        ctx = BenchContext(out_dir=".", dataset_dir=None, model_path=None, seed=0)
        with pytest.raises(ArgumentError, match="--dataset"):
            ctx.require_dataset()
        with pytest.raises(ArgumentError, match="--model"):
            ctx.require_model()


class TestCsvAndPanel:
    def test_csv_rendering(self):
        got = bench._csv(("a", "b"), [(1, 0.5), ("x", 0.1)])
        assert got == "a,b\n1,0.5\nx,0.10000000000000001\n"

    def test_panel_layout(self):
        a = _image(1)
        b = _image(2)
        panel = bench._panel([a, b], gap=4)
        assert panel.values.shape == (8, 20)
        assert np.array_equal(panel.values[:, :8], a.values)
        assert np.array_equal(panel.values[:, 12:], b.values)
        assert np.all(panel.values[:, 8:12] == np.float32(bench.WINDOW[1]))
        assert panel.spacing == a.spacing

    def test_panel_validation(self):
        with pytest.raises(ArgumentError):
            bench._panel([])
        with pytest.raises(ArgumentError, match="shape"):
            bench._panel([_image(1, 8), _image(2, 9)])


class TestRunExperimentSpec:
    def test_report_files_and_pass(self, tmp_path):
        report = run_experiment_spec(TOY_SPEC, tmp_path, seed=3)
        assert report.passed
        assert report.summary_line() == "unit-toy: PASS (2/2 assertions)"
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["metrics.csv", "panel.png", "report.md", "rows.csv"]
        text = (tmp_path / "report.md").read_text()
        assert "# Experiment: unit-toy" in text
        assert "Stages: one -> two" in text
        assert "| high beats low | PASS |" in text
        assert "Seed: 3" in text
        metrics_csv = (tmp_path / "metrics.csv").read_text()
        assert metrics_csv.startswith("metric,value\n")
        assert (tmp_path / "panel.png").read_bytes()[:4] == b"\x89PNG"
        assert set(report.output_paths) == {str(tmp_path / n) for n in names}

    def test_reruns_are_byte_identical(self, tmp_path):
        run_experiment_spec(TOY_SPEC, tmp_path / "a", seed=9)
        run_experiment_spec(TOY_SPEC, tmp_path / "b", seed=9)
        for name in ("report.md", "metrics.csv", "rows.csv", "panel.png"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes(), name

    def test_seed_changes_outputs(self, tmp_path):
        run_experiment_spec(TOY_SPEC, tmp_path / "a", seed=1)
        run_experiment_spec(TOY_SPEC, tmp_path / "b", seed=2)
        assert (tmp_path / "a" / "metrics.csv").read_bytes() != \
            (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_failed_assertion_still_writes_report(self, tmp_path):
        spec = ExperimentSpec(
            name="unit-fail",
            metrics=("x",),
            assertions=(MetricAssertion("x positive", "positive", ("x",)),),
            runner=lambda ctx: BenchResult(metrics={"x": -1.0}),
        )
        report = run_experiment_spec(spec, tmp_path, seed=0)
        assert not report.passed
        assert report.summary_line() == "unit-fail: FAIL (0/1 assertions)"
        assert "| x positive | FAIL |" in (tmp_path / "report.md").read_text()

    def test_missing_declared_metric_aborts_before_report(self, tmp_path):
        spec = ExperimentSpec(
            name="unit-missing",
            metrics=("x", "y"),
            runner=lambda ctx: BenchResult(metrics={"x": 1.0}),
        )
        with pytest.raises(ArgumentError, match="did not record"):
            run_experiment_spec(spec, tmp_path, seed=0)
        assert not (tmp_path / "report.md").exists()

    def test_empty_spec_passes(self, tmp_path):
        report = run_experiment_spec(ExperimentSpec(name="unit-empty"), tmp_path)
        assert report.passed
        assert (tmp_path / "report.md").exists()
        assert (tmp_path / "metrics.csv").read_text() == "metric,value\n"

    def test_unknown_name(self, tmp_path):
        with pytest.raises(ArgumentError, match="known:"):
            run_experiment("no-such-thing", tmp_path)


class TestBenchCli:
    def test_list(self, capsys):
        assert cli.main(["bench", "list"]) == 0
        assert capsys.readouterr().out.splitlines() == bench.list_experiments()

    def test_run_pass_and_fail_exit_codes(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setitem(bench.REGISTRY, "unit-toy", TOY_SPEC)
        out = tmp_path / "ok"
        assert cli.main(["bench", "run", "unit-toy", "--out", str(out), "--seed", "3"]) == 0
        captured = capsys.readouterr()
        assert captured.out.strip() == "unit-toy: PASS (2/2 assertions)"
        assert (out / "run.json").exists()

        fail_spec = ExperimentSpec(
            name="unit-fail",
            metrics=("x",),
            assertions=(MetricAssertion("x positive", "positive", ("x",)),),
            runner=lambda ctx: BenchResult(metrics={"x": -1.0}),
        )
        monkeypatch.setitem(bench.REGISTRY, "unit-fail", fail_spec)
        out2 = tmp_path / "bad"
        assert cli.main(["bench", "run", "unit-fail", "--out", str(out2)]) == 4
        captured = capsys.readouterr()
        assert "FAIL" in captured.out
        err_lines = captured.err.strip().splitlines()
        assert len(err_lines) == 1
        assert err_lines[0].startswith("BENCH_ASSERTION: failed assertions: x positive")
        assert (out2 / "report.md").exists()
        assert (out2 / "run.json").exists()

    def test_run_unknown_experiment(self, tmp_path, capsys):
        assert cli.main(["bench", "run", "nope", "--out", str(tmp_path)]) == 2
        assert "unknown experiment" in capsys.readouterr().err


class TestSummaryLine:
    def test_mixed_results(self):
        from gsct.bench import AssertionResult

        report = ExperimentReport(
            name="demo",
            metrics={},
            assertions=(AssertionResult("a", True, ""), AssertionResult("b", False, "")),
            output_paths=(),
        )
        assert report.summary_line() == "demo: FAIL (1/2 assertions)"
