# tests/test_numerics/test_euler2d.py
import pytest
import numpy as np
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))
from regularity_lab.app.core.errors import NumericalFailure
from regularity_lab.numerics.euler2d import (
    VorticityState,
    admissible_dt,
    biot_savart,
    continuity_modulus,
    curl,
    dealias_mask,
    energy,
    enstrophy,
    exp_integrability_monitor,
    run_euler,
    smoothed_vortex_patch,
    step_euler,
    vorticity_regularity_experiment,
)
from regularity_lab.numerics.families import build_initial
from regularity_lab.numerics.torus_core import ScalarField, TorusGrid, divergence


def shear_mode(n):
    grid = TorusGrid(2, n)
    return VorticityState.from_values(grid, build_initial("sin", grid, {"axis": 1}).values)


class TestVorticityState:
    def test_mean_must_vanish(self):
        grid = TorusGrid(2, 16)
        with pytest.raises(ValueError):
            VorticityState(ScalarField.constant(grid, 1.0))
        state = VorticityState.from_values(grid, np.ones(grid.shape) + build_initial("sin", grid).values)
        assert abs(state.omega.mean()) < 1e-15

    def test_plane_only(self):
        line = TorusGrid(1, 16)
        with pytest.raises(ValueError):
            VorticityState(ScalarField(line, build_initial("sin", line).values))


class TestBiotSavart:
    def setup_method(self):
        self.state = shear_mode(32)

    def test_single_mode_velocity(self):
        b = biot_savart(self.state)
        _, y = self.state.grid.coordinates()
        np.testing.assert_allclose(b.components[0], np.cos(2 * np.pi * y) / (2 * np.pi), atol=1e-12)
        np.testing.assert_allclose(b.components[1], 0.0, atol=1e-12)

    def test_curl_inverts_biot_savart(self):
        patch = smoothed_vortex_patch(TorusGrid(2, 64))
        b = biot_savart(patch)
        assert np.max(np.abs(divergence(b).values)) < 1e-10
        np.testing.assert_allclose(curl(b).values, patch.omega.values, atol=1e-10)

    def test_non_zero_mean_rejected(self):
        with pytest.raises(ValueError):
            biot_savart(ScalarField.constant(TorusGrid(2, 16), 1.0))

    def test_invariants_of_single_mode(self):
        assert energy(self.state) == pytest.approx(1.0 / (4 * np.pi ** 2))
        assert enstrophy(self.state) == pytest.approx(0.5)

    def test_dealias_mask_two_thirds(self):
        mask = dealias_mask(32)
        assert mask[10, 10] == 1.0
        assert mask[11, 0] == 0.0
        assert mask[-10, 0] == 1.0


class TestTimeStepping:
    def test_cfl_violation_is_a_numerical_failure(self):
        state = shear_mode(32)
        with pytest.raises(NumericalFailure):
            step_euler(state, 1.0)
        with pytest.raises(ValueError):
            step_euler(state, 0.0)

    def test_zero_vorticity_has_no_cfl_limit(self):
        grid = TorusGrid(2, 16)
        assert admissible_dt(VorticityState(ScalarField.constant(grid, 0.0))) == float("inf")

    def test_single_mode_is_steady(self):
        state = shear_mode(32)
        traj = run_euler(state, 0.5, [0.25])
        assert traj.times == [0.0, 0.25, 0.5]
        assert np.max(np.abs(traj.states[-1].omega.values - state.omega.values)) < 1e-12

    def test_patch_conserves_invariants(self):
        patch = smoothed_vortex_patch(TorusGrid(2, 64))
        traj = run_euler(patch, 0.5, [0.25], cfl=0.2)
        diag = traj.diagnostics
        assert diag["mean"].abs().max() < 1e-12
        assert diag["energy_drift"].abs().max() < 1e-6
        assert diag["enstrophy_drift"].abs().max() < 1e-6
        assert all(dt > 0 for dt in traj.dt_history)

    def test_run_validation(self):
        state = shear_mode(16)
        with pytest.raises(ValueError):
            run_euler(state, 0.0)
        with pytest.raises(ValueError):
            run_euler(state, 1.0, [0.0, 0.5])

    def test_trajectory_drift_and_save(self, tmp_path):
        traj = run_euler(shear_mode(16), 0.5, [0.25])
        drift = traj.drift()
        assert drift.horizon == pytest.approx(0.5)
        np.testing.assert_allclose(drift.at(0.1).components[0], biot_savart(traj.states[0]).components[0],
                                   atol=1e-12)
        assert len(traj.save(tmp_path)) == 3


class TestDiagnostics:
    def test_monitor_floor_for_single_mode(self):
        traj = run_euler(shear_mode(32), 0.5, [0.25])
        C, table = exp_integrability_monitor(traj, 1.0)
        assert C == 2.0
        assert (table["slack"] >= 0).all()

    def test_monitor_without_vorticity(self):
        grid = TorusGrid(2, 16)
        traj = run_euler(VorticityState(ScalarField.constant(grid, 0.0)), 0.5)
        C, _ = exp_integrability_monitor(traj, 0.0)
        assert C == 2.0

    def test_continuity_modulus_of_single_mode(self):
        moduli = continuity_modulus(shear_mode(32), [1 / 32, 1 / 8])
        # the nearest node to the steepest point sits half a cell away
        assert moduli[0] == pytest.approx(np.sin(np.pi / 16), abs=1e-12)
        assert moduli[1] == pytest.approx(2 * np.sin(np.pi / 8), abs=1e-12)

    def test_vortex_patch_normalisation(self):
        patch = smoothed_vortex_patch(TorusGrid(2, 64), radius=0.15)
        assert patch.omega.sup() == pytest.approx(1.0)
        assert abs(patch.omega.mean()) < 1e-14
        with pytest.raises(ValueError):
            smoothed_vortex_patch(TorusGrid(2, 64), radius=0.6)


class TestVorticityRegularity:
    def test_steady_mode_shows_no_decay(self):
        result = vorticity_regularity_experiment(shear_mode(32), 0.5, 2.0, 0.5, snapshots=2)
        assert result.profile.flags["no_decay"]
        assert result.bound_table["pass"].all()
        assert result.bmo_constant == 2.0
        assert (result.bound_table["slack"] >= -1e-12).all()

    def test_lagrangian_cross_check_runs_by_default(self):
        result = vorticity_regularity_experiment(shear_mode(32), 0.5, 2.0, 0.5, snapshots=2)
        assert result.transport is not None
        assert result.lagrangian_defect < 1e-8
        skipped = vorticity_regularity_experiment(shear_mode(32), 0.5, 2.0, 0.5, snapshots=2, cross_check=False)
        assert skipped.transport is None and skipped.lagrangian_defect is None

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            vorticity_regularity_experiment(shear_mode(16), 1.0, 2.0, 0.5)
