# tests/test_app/test_reporting.py
import json
import pytest
import pandas as pd
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))
from regularity_lab.app.core.errors import ConfigError
from regularity_lab.app.experiments.base import ExperimentOutput, Figure
from regularity_lab.app.models.schemas import Claim, ExperimentKind, ResultRecord, Verdict
from regularity_lab.app.reporting import (
    RECORD_FILE,
    emit_report,
    load_records,
    write_artifacts,
    write_figure,
    write_record,
)


def make_record(experiment, verdicts, constants=None):
    record = ResultRecord(experiment=experiment, config_hash="0" * 64, config={}, verdicts=verdicts,
                          constants=constants or {})
    record.record_hash = record.compute_hash()
    return record


class TestEmitReport:
    """Test the markdown summary"""

    def setup_method(self):
        self.passing = make_record(ExperimentKind.HOLDER, [
            Verdict(claim=Claim.HOLDER_FLOW, name="exponent matches e^-t at t=1", passed=True,
                    measured=0.37, bound=0.3679),
        ], {"C": 1.25})
        self.failing = make_record(ExperimentKind.SEMIGROUP, [
            Verdict(claim=Claim.SEMIGROUP, name="composition defect", passed=False, measured=0.5, bound=1e-6),
            Verdict(claim=Claim.SEMIGROUP, name="iterated-composition bound", passed=True),
        ])

    def test_failures_listed_first(self):
        text = emit_report([self.passing, self.failing])
        assert text.startswith("# Regularity lab report")
        assert text.index("## Failures") < text.index("## Passed") < text.index("## Fitted constants")
        failures = text[text.index("## Failures"):text.index("## Passed")]
        assert "composition defect" in failures
        assert "### flow semigroup" in failures
        assert "[semigroup]" in failures

    def test_counts_line(self):
        text = emit_report([self.passing, self.failing])
        assert "2 record(s), 2 verdict(s) passed, 1 failed" in text

    def test_no_failure_section_when_all_pass(self):
        text = emit_report([self.passing])
        assert "## Failures" not in text
        assert "### Holder flow" in text

    def test_constants_table(self):
        text = emit_report([self.passing])
        assert f"| holder | {self.passing.record_hash[:12]} | C | 1.25 |" in text

    def test_measured_and_bound_rendered(self):
        text = emit_report([self.failing])
        assert "(measured 0.5, bound 1e-06)" in text

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            emit_report([])


class TestArtifacts:
    """Test artifact and record persistence"""

    def test_write_figure(self, tmp_path):
        paths = write_figure("decay", Figure([0.0, 1.0], [1.0, 0.5], "t", "alpha_t"), tmp_path)
        assert [p.name for p in paths] == ["decay.csv", "decay.gp"]
        frame = pd.read_csv(tmp_path / "decay.csv")
        assert list(frame.columns) == ["t", "alpha_t"]
        assert frame["alpha_t"].tolist() == [1.0, 0.5]
        script = (tmp_path / "decay.gp").read_text()
        assert 'plot "decay.csv"' in script
        assert 'set ylabel "alpha_t"' in script

    def test_write_artifacts_names(self, tmp_path):
        output = ExperimentOutput()
        output.tables["lusin"] = pd.DataFrame({"t": [0.5], "bad_set": [0.1]})
        output.figures["curve"] = Figure([0.0], [1.0], "t", "q_t")
        names = write_artifacts(output, tmp_path / "run")
        assert names == ["curve.csv", "curve.gp", "lusin.csv"]
        assert (tmp_path / "run" / "lusin.csv").exists()

    def test_record_roundtrip(self, tmp_path):
        record = make_record(ExperimentKind.HOLDER, [Verdict(claim=Claim.HOLDER_FLOW, name="x", passed=True)])
        for sub in ("b", "a"):
            (tmp_path / sub).mkdir()
            write_record(record, tmp_path / sub)
        data = json.loads((tmp_path / "a" / RECORD_FILE).read_text())
        assert data["record_hash"] == record.record_hash
        loaded = load_records(tmp_path)
        assert len(loaded) == 2
        assert loaded[0].compute_hash() == record.record_hash

    def test_load_records_missing_directory(self, tmp_path):
        with pytest.raises(ConfigError):
            load_records(tmp_path / "absent")

    def test_load_records_corrupt(self, tmp_path):
        (tmp_path / RECORD_FILE).write_text("{not json")
        with pytest.raises(ConfigError):
            load_records(tmp_path)
