# tests/test_app/test_main.py
import json
import pytest
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))
from regularity_lab.app import experiments
from regularity_lab.app.core.errors import (
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_FAILURE,
    EXIT_OK,
    EXIT_VERDICT_FAILURE,
    NumericalFailure,
)
from regularity_lab.app.main import main, output_directory, package_versions, run_experiment
from regularity_lab.app.models.schemas import ExperimentKind, ResultRecord, load_config

CONFIGS = os.path.join(os.path.dirname(__file__), '..', '..', 'configs')


def config_path(name):
    return os.path.join(CONFIGS, f"{name}.json")


class TestRunCommand:
    """Test `lab run` end to end on the cheap configs"""

    def test_norm_selftest(self, tmp_path):
        code = main(["run", config_path("norm_selftest"), "--output", str(tmp_path)])
        assert code == EXIT_OK
        for name in ("record.json", "metrics.prom", "norm_reports.csv"):
            assert (tmp_path / name).exists()
        record = ResultRecord.model_validate_json((tmp_path / "record.json").read_text())
        assert record.experiment == ExperimentKind.NORM_SELFTEST
        assert record.passed
        assert record.record_hash == record.compute_hash()
        assert "numpy" in record.versions

    def test_schedule_table(self, tmp_path):
        code = main(["run", config_path("schedule_table_sharp_decay"), "--output", str(tmp_path)])
        assert code == EXIT_OK
        assert (tmp_path / "schedule.csv").exists()
        assert (tmp_path / "log_lambda.gp").exists()

    def test_euler_steady_mode(self, tmp_path):
        code = main(["run", config_path("euler_steady_mode"), "--output", str(tmp_path)])
        assert code == EXIT_OK
        assert "lab_verdicts_total" in (tmp_path / "metrics.prom").read_text()

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.json")]) == EXIT_CONFIG_ERROR

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{\"experiment\": ")
        assert main(["run", str(path)]) == EXIT_CONFIG_ERROR

    def test_invalid_config(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"experiment": "holder", "grid": {"points_per_axis": 50}}))
        assert main(["run", str(path), "--output", str(tmp_path / "out")]) == EXIT_CONFIG_ERROR
        assert "grid.points_per_axis" in capsys.readouterr().err

    def test_invalid_params(self, tmp_path, capsys):
        path = tmp_path / "bad_params.json"
        path.write_text(json.dumps({"experiment": "norm_selftest", "grid": {"points_per_axis": 16, "dim": 1},
                                    "params": {"atol": -1.0}}))
        assert main(["run", str(path), "--output", str(tmp_path / "out")]) == EXIT_CONFIG_ERROR
        assert "params.atol" in capsys.readouterr().err

    def test_failed_verdict_exit_code(self, tmp_path, capsys):
        path = tmp_path / "strict.json"
        path.write_text(json.dumps({
            "experiment": "schedule_table",
            "params": {"kind": "sharp_decay", "schedule": {"m": 1, "lam": 1.0, "c0": 1.0, "d": 2}, "log_n": ["exp:5"]},
        }))
        assert main(["run", str(path), "--output", str(tmp_path / "out")]) == EXIT_VERDICT_FAILURE
        assert "FAIL" in capsys.readouterr().err

    @pytest.mark.parametrize("error", [
        RuntimeError("Optimal parameters not found"),
        FloatingPointError("overflow"),
        NumericalFailure("transported density lost its mean"),
    ])
    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch, capsys, error):
        def broken(config):
            raise error

        monkeypatch.setitem(experiments.RUNNERS, ExperimentKind.NORM_SELFTEST, broken)
        code = main(["run", config_path("norm_selftest"), "--output", str(tmp_path)])
        assert code == EXIT_NUMERICAL_FAILURE
        assert "error:" in capsys.readouterr().err


class TestReportCommand:
    """Test `lab report` over a results directory"""

    def test_report_written(self, tmp_path):
        assert main(["run", config_path("norm_selftest"), "--output", str(tmp_path / "selftest")]) == EXIT_OK
        assert main(["run", config_path("schedule_table_sharp_decay"), "--output", str(tmp_path / "table")]) == EXIT_OK
        assert main(["report", str(tmp_path)]) == EXIT_OK
        text = (tmp_path / "report.md").read_text()
        assert "### norm identities" in text
        assert "### schedule algebra" in text
        assert "## Failures" not in text

    def test_empty_directory(self, tmp_path):
        assert main(["report", str(tmp_path)]) == EXIT_CONFIG_ERROR
        assert not (tmp_path / "report.md").exists()


class TestHelpers:
    """Test the run plumbing"""

    def test_schema_command(self, capsys):
        assert main(["schema"]) == EXIT_OK
        schema = json.loads(capsys.readouterr().out)
        assert "experiment" in schema["properties"]

    def test_output_directory_from_hash(self, monkeypatch, tmp_path):
        from regularity_lab.app.core.config import get_settings
        monkeypatch.setenv("LAB_OUT", str(tmp_path))
        get_settings.cache_clear()
        try:
            config = load_config({"experiment": "norm_selftest"})
            directory = output_directory(config)
            assert directory.parent == tmp_path
            assert directory.name == f"norm_selftest-{config.config_hash()[:12]}"
        finally:
            get_settings.cache_clear()

    def test_explicit_output_dir_wins(self, tmp_path):
        config = load_config({"experiment": "norm_selftest", "output_dir": str(tmp_path / "mine")})
        assert output_directory(config) == tmp_path / "mine"

    def test_run_experiment_returns_record(self, tmp_path):
        config = load_config({"experiment": "norm_selftest", "grid": {"points_per_axis": 32, "dim": 1}})
        record = run_experiment(config, tmp_path)
        assert record.verdicts
        assert record.config["grid"]["points_per_axis"] == 32
        assert "output_dir" not in record.config

    def test_versions(self):
        versions = package_versions()
        assert {"numpy", "scipy", "pandas", "pydantic", "mpmath"} <= set(versions)
