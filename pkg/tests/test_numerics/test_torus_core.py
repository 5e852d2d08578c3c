# tests/test_numerics/test_torus_core.py
import pytest
import numpy as np
import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))
from regularity_lab.app.core.errors import NumericalFailure
from regularity_lab.numerics.families import build_drift, build_initial
from regularity_lab.numerics.torus_core import (
    ScalarField,
    TimeDependentField,
    TorusGrid,
    VectorField,
    divergence,
    exp_integrability,
    gradient_magnitude,
    jacobian,
    sample_field,
    spectral_gradient,
    spectral_potential,
    torus_distance,
)

TWO_PI = 2.0 * np.pi


class TestTorusGrid:
    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            TorusGrid(3, 16)
        with pytest.raises(ValueError):
            TorusGrid(2, 12)
        with pytest.raises(ValueError):
            TorusGrid(1, 4)

    def test_geometry(self):
        grid = TorusGrid(2, 16)
        assert grid.shape == (16, 16)
        assert grid.size == 256
        assert grid.spacing == pytest.approx(1 / 16)
        assert grid.points().shape == (256, 2)
        assert grid.refine().points_per_axis == 32

    def test_midpoint_integral_of_a_mode_vanishes(self):
        grid = TorusGrid(1, 32)
        sine = build_initial("sin", grid)
        assert abs(grid.integrate(sine.values)) < 1e-14


class TestTorusDistance:
    def test_wraps_around(self):
        assert torus_distance(0.1, 0.9) == pytest.approx(0.2)
        assert torus_distance(0.0, 1.0) == pytest.approx(0.0)

    def test_plane(self):
        assert torus_distance([0.05, 0.05], [0.95, 0.95]) == pytest.approx(np.sqrt(0.02))
        assert torus_distance([0.0, 0.0], [0.5, 0.5]) == pytest.approx(np.sqrt(0.5))

    def test_vectorised(self):
        d = torus_distance(np.array([[0.1, 0.0], [0.4, 0.0]]), np.array([0.9, 0.0]))
        np.testing.assert_allclose(d, [0.2, 0.5])


class TestSpectralCalculus:
    def setup_method(self):
        self.line = TorusGrid(1, 32)
        self.plane = TorusGrid(2, 32)

    def test_gradient_of_sine(self):
        x = self.line.coordinates()[0]
        grad = spectral_gradient(build_initial("sin", self.line)).components[0]
        np.testing.assert_allclose(grad, TWO_PI * np.cos(TWO_PI * x), atol=1e-9)

    def test_gradient_of_constant_is_zero(self):
        grad = spectral_gradient(ScalarField.constant(self.plane, 4.0))
        assert grad.sup() < 1e-12

    def test_shear_is_divergence_free(self):
        shear = build_drift("shear", self.plane).at(0.0)
        assert np.max(np.abs(divergence(shear).values)) < 1e-10

    def test_flagged_compressible_field_is_rejected(self):
        x, _ = self.plane.coordinates()
        with pytest.raises(ValueError):
            VectorField(self.plane, (np.sin(TWO_PI * x), np.zeros_like(x)), divergence_free=True)

    def test_potential_recovers_gradient_part(self):
        f = build_initial("band_limited", self.plane, {"max_mode": 3, "seed": 4})
        grad = spectral_gradient(f)
        phi = spectral_potential(grad)
        np.testing.assert_allclose(phi.values, f.values - f.mean(), atol=1e-10)

    def test_jacobian_methods_agree_on_smooth_field(self):
        shear = build_drift("shear", TorusGrid(2, 128)).at(0.0)
        spectral = jacobian(shear, "spectral")
        fd = jacobian(shear, "fd")
        assert np.max(np.abs(spectral - fd)) < 0.01 * TWO_PI
        with pytest.raises(ValueError):
            jacobian(shear, "upwind")

    def test_gradient_magnitude_of_shear(self):
        shear = build_drift("shear", self.plane, {"amplitude": 0.5}).at(0.0)
        _, y = self.plane.coordinates()
        expected = 0.5 * TWO_PI * np.abs(np.cos(TWO_PI * y))
        np.testing.assert_allclose(gradient_magnitude(shear).values, expected, atol=1e-9)

    def test_non_finite_values_rejected(self):
        values = np.zeros(self.line.shape)
        values[3] = np.nan
        with pytest.raises(ValueError):
            ScalarField(self.line, values)


class TestInterpolation:
    def setup_method(self):
        self.grid = TorusGrid(1, 64)
        self.sine = build_initial("sin", self.grid)

    def test_nodes_are_exact(self):
        h = self.grid.spacing
        for k in (0, 5, 63):
            assert sample_field(self.sine, k * h) == self.sine.values[k]

    def test_cubic_accuracy(self):
        pts = np.array([0.123, 0.5 + 1e-3, 0.987])
        np.testing.assert_allclose(sample_field(self.sine, pts), np.sin(TWO_PI * pts), atol=1e-5)

    def test_periodic_wrap(self):
        assert sample_field(self.sine, 1.25) == pytest.approx(sample_field(self.sine, 0.25))
        assert sample_field(self.sine, -0.1) == pytest.approx(np.sin(TWO_PI * 0.9), abs=1e-5)

    def test_vector_sampling_shape(self):
        plane = TorusGrid(2, 16)
        shear = build_drift("shear", plane).at(0.0)
        single = sample_field(shear, [0.3, 0.25])
        assert single.shape == (2,)
        assert sample_field(shear, np.random.default_rng(0).random((7, 2))).shape == (7, 2)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            sample_field(self.sine, 0.3, "quintic")


class TestExpIntegrability:
    def setup_method(self):
        self.plane = TorusGrid(2, 32)

    def test_zero_field(self):
        assert exp_integrability(VectorField.zeros(self.plane), 2.0) == pytest.approx(1.0)

    def test_small_beta_tends_to_one(self):
        shear = build_drift("shear", self.plane).at(0.0)
        assert exp_integrability(shear, 1e-12) == pytest.approx(1.0, abs=1e-9)

    def test_monotone_in_beta(self):
        shear = build_drift("shear", self.plane).at(0.0)
        assert exp_integrability(shear, 0.1) < exp_integrability(shear, 0.2)

    def test_beta_must_be_positive(self):
        with pytest.raises(ValueError):
            exp_integrability(VectorField.zeros(self.plane), 0.0)

    def test_overflow_is_a_numerical_failure(self):
        shear = build_drift("shear", self.plane).at(0.0)
        with pytest.raises(NumericalFailure):
            exp_integrability(shear, 200.0)


class TestTimeDependentField:
    def setup_method(self):
        self.grid = TorusGrid(1, 16)
        self.fields = [VectorField(self.grid, (np.full(self.grid.shape, v),)) for v in (0.0, 1.0, 3.0)]

    def test_sampled_interpolates_linearly(self):
        b = TimeDependentField.sampled([0.0, 1.0, 2.0], self.fields)
        assert b.horizon == pytest.approx(2.0)
        np.testing.assert_allclose(b.at(0.5).components[0], 0.5)
        np.testing.assert_allclose(b.at(1.5).components[0], 2.0)
        np.testing.assert_allclose(b.velocity(1.5, np.array([[0.3]])), [[2.0]])

    def test_sampled_validation(self):
        with pytest.raises(ValueError):
            TimeDependentField.sampled([0.5, 1.0, 2.0], self.fields)
        with pytest.raises(ValueError):
            TimeDependentField.sampled([0.0, 2.0, 1.0], self.fields)

    def test_reversed_negates(self):
        b = TimeDependentField.sampled([0.0, 1.0, 2.0], self.fields)
        rev = b.reversed(2.0)
        np.testing.assert_allclose(rev.at(0.5).components[0], -2.0)
        with pytest.raises(ValueError):
            b.reversed(3.0)

    def test_superpose_adds(self):
        plane = TorusGrid(2, 16)
        a = build_drift("translation", plane, {"velocity": [1.0, 0.0]})
        c = build_drift("translation", plane, {"velocity": [0.0, 2.0]})
        total = TimeDependentField.superpose([a, c])
        np.testing.assert_allclose(total.velocity(0.0, np.array([[0.2, 0.7]])), [[1.0, 2.0]])
