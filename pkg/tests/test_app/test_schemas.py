# tests/test_app/test_schemas.py
import pytest
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))
from regularity_lab.app.core.errors import EXIT_CONFIG_ERROR, ConfigError
from regularity_lab.app.experiments.base import parse_params
from regularity_lab.app.experiments.transport import TransportDecayParams
from regularity_lab.app.models.schemas import (
    Claim,
    ExperimentKind,
    ResultRecord,
    Verdict,
    load_config,
)


class TestExperimentConfig:
    """Test config validation and hashing"""

    def setup_method(self):
        self.data = {
            "experiment": "transport_decay",
            "grid": {"points_per_axis": 32, "dim": 1},
            "drift": {"family": "translation", "params": {"velocity": [0.25]}},
            "initial": {"family": "sin"},
            "times": [1.0, 0.5, 0.5, 0.25],
        }

    def test_defaults(self):
        config = load_config({"experiment": "norm_selftest"})
        assert config.experiment == ExperimentKind.NORM_SELFTEST
        assert config.grid.points_per_axis == 64
        assert config.grid.dim == 2
        assert config.times == [1.0]
        assert config.tolerances.cfl == 0.5
        assert config.drift.family == "zero"

    def test_times_sorted_and_deduplicated(self):
        config = load_config(self.data)
        assert config.times == [0.25, 0.5, 1.0]

    @pytest.mark.parametrize("patch, path", [
        ({"grid": {"points_per_axis": 48}}, "grid.points_per_axis"),
        ({"grid": {"points_per_axis": 4}}, "grid.points_per_axis"),
        ({"drift": {"family": "vortex"}}, "drift.family"),
        ({"tolerances": {"cfl": 1.5}}, "tolerances.cfl"),
        ({"experiment": "mixing"}, "experiment"),
        ({"times": [-1.0]}, "times.0"),
    ])
    def test_error_paths(self, patch, path):
        with pytest.raises(ConfigError) as info:
            load_config({**self.data, **patch})
        assert info.value.path == path
        assert str(info.value).startswith(f"{path}: ")
        assert info.value.exit_code == EXIT_CONFIG_ERROR

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as info:
            load_config({**self.data, "resolution": 64})
        assert info.value.path == "resolution"

    def test_config_hash_ignores_output_dir(self):
        a = load_config(self.data)
        b = load_config({**self.data, "output_dir": "/tmp/elsewhere"})
        assert a.config_hash() == b.config_hash()
        assert len(a.config_hash()) == 64

    def test_config_hash_tracks_content(self):
        a = load_config(self.data)
        b = load_config({**self.data, "seed": 7})
        assert a.config_hash() != b.config_hash()

    def test_params_error_path(self):
        config = load_config({**self.data, "params": {"alpha": 2.0}})
        with pytest.raises(ConfigError) as info:
            parse_params(TransportDecayParams, config)
        assert info.value.path == "params.alpha"


class TestResultRecord:
    """Test record verdict summaries and hashing"""

    def setup_method(self):
        self.record = ResultRecord(
            experiment=ExperimentKind.SCHEDULE_TABLE,
            config_hash="abc",
            config={"experiment": "schedule_table"},
            verdicts=[
                Verdict(claim=Claim.SCHEDULE, name="ok", passed=True),
                Verdict(claim=Claim.SCHEDULE, name="bad", passed=False, measured=2.0, bound=1.0),
            ],
            constants={"C": 1.5},
            wall_clock=3.0,
        )

    def test_passed_and_failures(self):
        assert not self.record.passed
        assert [v.name for v in self.record.failures] == ["bad"]

    def test_empty_record_passes(self):
        record = ResultRecord(experiment=ExperimentKind.HOLDER, config_hash="x", config={})
        assert record.passed
        assert record.failures == []

    def test_hash_ignores_wall_clock(self):
        first = self.record.compute_hash()
        self.record.wall_clock = 99.0
        self.record.record_hash = first
        assert self.record.compute_hash() == first

    def test_hash_tracks_constants(self):
        first = self.record.compute_hash()
        self.record.constants["C"] = 2.5
        assert self.record.compute_hash() != first
