# tests/test_numerics/test_transport.py
import pytest
import numpy as np
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))
from regularity_lab.numerics.families import build_drift, build_initial
from regularity_lab.numerics.transport import (
    BOUND_TABLE_COLUMNS,
    admissible_horizon,
    gradient_decay_profile,
    regularity_decay_experiment,
    solve_transport,
    weak_form_residual,
)
from regularity_lab.app.core.errors import NumericalFailure
from regularity_lab.numerics import transport
from regularity_lab.numerics.torus_core import ScalarField, TorusGrid


class TestSolveTransport:
    def setup_method(self):
        self.line = TorusGrid(1, 64)
        self.b = build_drift("translation", self.line, {"velocity": [0.25]})
        self.u0 = build_initial("sin", self.line)

    def test_translation_shifts_the_datum(self):
        sol = solve_transport(self.b, self.u0, [0.5, 1.0])
        assert sol.times == [0.0, 0.5, 1.0]
        x = self.line.coordinates()[0]
        for t in (0.5, 1.0):
            np.testing.assert_allclose(sol.at(t).values, np.sin(2 * np.pi * (x - 0.25 * t)), atol=1e-5)
        assert sol.at(0.0) is self.u0

    def test_mass_is_conserved(self):
        sol = solve_transport(self.b, self.u0, [0.3, 0.7])
        assert max(sol.mass_defects) < 1e-6

    def test_missing_snapshot(self):
        sol = solve_transport(self.b, self.u0, [1.0])
        with pytest.raises(KeyError):
            sol.at(0.5)

    def test_validation(self):
        with pytest.raises(ValueError):
            solve_transport(self.b, build_initial("sin", TorusGrid(1, 32)), [0.5])
        with pytest.raises(ValueError):
            solve_transport(self.b, self.u0, [2.0])

    def test_values_stay_in_initial_range(self):
        plane = TorusGrid(2, 32)
        b = build_drift("shear", plane, {"amplitude": 0.5})
        u0 = build_initial("smoothed_indicator", plane)
        sol = solve_transport(b, u0, [0.5, 1.0], mass_tol=0.1)
        for u in sol.snapshots:
            assert u.values.min() >= u0.values.min() and u.values.max() <= u0.values.max()

    def test_save(self, tmp_path):
        sol = solve_transport(self.b, self.u0, [0.5, 1.0])
        paths = sol.save(tmp_path)
        assert len(paths) == 3
        assert all(p.exists() for p in paths)

    def test_lost_mean_raises(self):
        spike = np.zeros(64)
        spike[10] = 1.0
        u0 = ScalarField(self.line, spike)
        with pytest.raises(NumericalFailure):
            solve_transport(self.b, u0, [1.0 / 32])
        sol = solve_transport(self.b, u0, [1.0 / 32], mass_tol=1.0)
        assert sol.mass_defects[-1] > 1e-6

    def test_overshoot_is_recorded_before_clipping(self):
        step = ScalarField(self.line, np.r_[np.ones(32), np.zeros(32)])
        sol = solve_transport(self.b, step, [1.0 / 32], mass_tol=1.0)
        assert sol.overshoots[0] == 0.0
        assert max(sol.overshoots) > 1e-3
        assert sol.snapshots[-1].values.min() >= 0.0 and sol.snapshots[-1].values.max() <= 1.0
        smooth = solve_transport(self.b, self.u0, [0.5, 1.0])
        assert len(smooth.overshoots) == 3
        assert max(smooth.overshoots) < 1e-5


class TestWeakForm:
    def test_translation_residual_is_small(self):
        line = TorusGrid(1, 64)
        b = build_drift("translation", line, {"velocity": [0.25]})
        times = np.arange(1, 33) / 32.0
        sol = solve_transport(b, build_initial("sin", line), times)
        assert weak_form_residual(sol, b, test_modes=3) < 1e-2

    def test_needs_dense_time_samples(self):
        line = TorusGrid(1, 64)
        b = build_drift("translation", line)
        sol = solve_transport(b, build_initial("sin", line), [0.5, 1.0])
        with pytest.raises(ValueError):
            weak_form_residual(sol, b)


class TestDecayExperiment:
    def setup_method(self):
        self.line = TorusGrid(1, 64)
        self.b = build_drift("translation", self.line, {"velocity": [0.25]})
        self.u0 = build_initial("sin", self.line)
        self.times = [0.25, 0.5, 1.0]

    def test_translation_shows_no_decay(self):
        result = regularity_decay_experiment(self.b, self.u0, 0.5, 2.0, 1.0, self.times)
        assert result.p_profile.flags["no_decay"]
        assert result.alpha_profile.flags["no_decay"]
        assert result.p_profile.exponent_curve == [2.0] * 3
        assert list(result.bound_table.columns) == BOUND_TABLE_COLUMNS
        assert result.bound_table["pass"].all()
        assert result.constants["K"] == pytest.approx(1.0)
        assert result.constants["L"] == pytest.approx(0.0, abs=1e-12)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            regularity_decay_experiment(self.b, self.u0, 1.5, 2.0, 1.0, self.times)
        with pytest.raises(ValueError):
            regularity_decay_experiment(self.b, self.u0, 0.5, 0.5, 1.0, self.times)

    def test_gradient_profile_without_decay(self):
        sol = solve_transport(self.b, self.u0, self.times)
        profile = gradient_decay_profile(sol, 2.0, 1.0, K=1.0, L=0.0, C1=0.1, C2=2.0)
        assert profile.flags["no_decay"]
        assert profile.fit_model == "constant"

    def test_admissible_horizon(self):
        assert admissible_horizon(0.5, 2.0, 1.0, 1.0, 1.0) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            admissible_horizon(0.5, 2.0, 2.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            admissible_horizon(0.5, 2.0, 1.0, 1.0, 0.0)


class TestRationalFit:
    def test_fit_failure_is_a_numerical_failure(self, monkeypatch):
        def diverge(*args, **kwargs):
            raise RuntimeError("Optimal parameters not found")

        monkeypatch.setattr(transport.optimize, "curve_fit", diverge)
        times = np.linspace(0.0, 1.0, 5)
        with pytest.raises(NumericalFailure):
            transport._fit_rational(times, 1.0 / (1.0 + times), 1.0)
