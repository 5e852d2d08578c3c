# tests/test_app/test_experiments.py
import json
import pytest
import numpy as np
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))
from regularity_lab.app.core.errors import ConfigError
from regularity_lab.app.experiments import RUNNERS
from regularity_lab.app.experiments.base import ExperimentOutput, finite_or_none, plain
from regularity_lab.app.experiments.patchwork import _check_rate_ratios, _doubling_pairs
from regularity_lab.app.models.schemas import Claim, ExperimentKind, load_config

CONFIGS = os.path.join(os.path.dirname(__file__), '..', '..', 'configs')


def load(name, **overrides):
    with open(os.path.join(CONFIGS, f"{name}.json")) as fh:
        data = json.load(fh)
    data.update(overrides)
    return load_config(data)


def run(config):
    return RUNNERS[config.experiment](config)


class TestRunnerTable:
    def test_every_kind_has_a_runner(self):
        assert set(RUNNERS) == set(ExperimentKind)


class TestExperimentOutput:
    """Test verdict bookkeeping"""

    def test_check_sanitizes_numbers(self):
        out = ExperimentOutput()
        verdict = out.check(Claim.SCHEDULE, "x", np.bool_(True), np.float64(np.inf), 2)
        assert verdict.passed is True
        assert verdict.measured is None
        assert verdict.bound == 2.0
        assert out.verdicts == [verdict]

    def test_plain(self):
        value = plain({"a": np.arange(2), "b": (np.float64(1.5),), 3: np.int64(4)})
        assert value == {"a": [0, 1], "b": [1.5], "3": 4}
        assert type(value["3"]) is int

    def test_finite_or_none(self):
        assert finite_or_none(np.nan) is None
        assert finite_or_none(None) is None
        assert finite_or_none(np.float32(0.5)) == 0.5


class TestTransportRunner:
    def test_translation_config_passes(self):
        out = run(load("transport_decay_translation"))
        failed = [v.name for v in out.verdicts if not v.passed]
        assert failed == []
        names = [v.name for v in out.verdicts]
        assert "p-view no-decay flag" in names
        assert "weak formulation residual" in names
        assert "mean of u_t conserved" in names
        assert "||u_t||_inf stays within (1 + interpolation_tol) ||u_0||_inf" in names
        assert {"p_exponent_profile", "alpha_exponent_profile", "bound_table"} <= set(out.tables)

    def test_weak_form_skipped_on_sparse_times(self):
        out = run(load("transport_decay_translation", times=[0.5, 1.0]))
        assert "weak formulation residual" not in [v.name for v in out.verdicts]

    def test_patchwork_initial_needs_patchwork_drift(self):
        config = load("transport_decay_translation", initial={"family": "patchwork"})
        with pytest.raises(ConfigError) as info:
            run(config)
        assert info.value.path == "initial.family"


class TestFlowRunners:
    def test_holder_log_drift(self):
        out = run(load("holder_log_drift"))
        assert out.verdicts
        assert all(v.passed for v in out.verdicts)
        assert all(v.claim == Claim.HOLDER_FLOW for v in out.verdicts)
        assert "holder_exponent" in out.profiles

    def test_log_seeds_need_a_line(self):
        config = load("holder_log_drift", grid={"points_per_axis": 32, "dim": 2}, drift={"family": "zero"})
        with pytest.raises(ConfigError) as info:
            run(config)
        assert info.value.path == "params.seeds"

    def test_semigroup_translation(self):
        config = load_config({
            "experiment": "semigroup",
            "grid": {"points_per_axis": 32, "dim": 2},
            "drift": {"family": "translation", "params": {"velocity": [0.3, 0.1]}},
            "times": [1.0],
            "params": {"t": 0.5, "s": 0.5, "power_delta": 0.25, "power_n": 2},
        })
        out = run(config)
        assert all(v.passed for v in out.verdicts)
        assert out.constants["defect"] < 1e-10

    def test_semigroup_horizon_checked(self):
        config = load_config({
            "experiment": "semigroup",
            "grid": {"points_per_axis": 32, "dim": 2},
            "drift": {"family": "translation"},
            "times": [0.5],
            "params": {"t": 0.5, "s": 0.5},
        })
        with pytest.raises(ConfigError) as info:
            run(config)
        assert info.value.path == "params.t"


class TestScheduleRunner:
    def test_sharp_decay_table(self):
        out = run(load("schedule_table_sharp_decay"))
        assert all(v.passed for v in out.verdicts)
        table = out.tables["schedule"]
        assert table["valid"].tolist() == [True, True, True]

    def test_invalid_values_fail_the_threshold_check(self):
        config = load("schedule_table_sharp_decay")
        config.params["log_n"] = ["exp:5"]
        out = run(config)
        assert not out.verdicts[0].passed

    def test_short_kind_names(self):
        config = load("schedule_table_sharp_decay")
        config.params["kind"] = "thm32"
        out = run(config)
        assert all(v.passed for v in out.verdicts)
        assert out.tables["schedule"]["valid"].tolist() == [True, True, True]


class TestRateRatios:
    def test_doubling_pairs(self):
        assert _doubling_pairs([1.0, 0.5, 1.0]) == [(0, 1), (2, 1)]
        assert _doubling_pairs([1.0, 0.3]) == []

    def test_ratio_verdicts(self):
        out = ExperimentOutput()
        _check_rate_ratios(out, "cells", [1.0, 0.5], [1.0, 2.1], 0.25)
        _check_rate_ratios(out, "cells", [1.0, 0.5], [1.0, 3.0], 0.25)
        assert [v.passed for v in out.verdicts] == [True, False]
        assert out.verdicts[0].measured == pytest.approx(2.1)


class TestEulerRunners:
    def test_steady_mode(self):
        out = run(load("euler_steady_mode"))
        assert all(v.passed for v in out.verdicts)
        assert "single-mode steady state preserved" in [v.name for v in out.verdicts]
        assert out.constants["bmo_constant"] >= 2.0

    def test_euler_needs_the_plane(self):
        config = load("euler_steady_mode", grid={"points_per_axis": 64, "dim": 1})
        with pytest.raises(ConfigError) as info:
            run(config)
        assert info.value.path == "grid.dim"

    @pytest.mark.slow
    def test_smooth_decay_runs_the_lagrangian_check(self):
        out = run(load("euler_decay_smooth"))
        verdicts = {v.name: v.passed for v in out.verdicts}
        assert verdicts["alpha(t) stays above the fitted hyperbola"]
        assert verdicts["Lagrangian transport reproduces omega_t"]
        assert "bmo_constant" in out.constants
