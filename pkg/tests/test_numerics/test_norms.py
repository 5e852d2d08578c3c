# tests/test_numerics/test_norms.py
import pytest
import numpy as np
import sys
import os
from pydantic import ValidationError
sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))
from regularity_lab.numerics.families import build_drift, build_initial
from regularity_lab.numerics.norms import (
    NormKind,
    NormReport,
    _difference_moments,
    bmo_report,
    bmo_seminorm,
    falpha_norm,
    gagliardo_seminorm,
    hajlasz_bracket,
    interpolation_constant,
    log_lipschitz_modulus,
    lp_norm,
    maximal_function,
    maximal_l2_constant,
    symmetric_competitor,
    verify_exponential_lusin,
)
from regularity_lab.numerics.torus_core import ScalarField, TorusGrid, VectorField


class TestLpAndGagliardo:
    def setup_method(self):
        self.line = TorusGrid(1, 32)
        self.sine = build_initial("sin", self.line)

    def test_lp_of_constant_and_sine(self):
        const = ScalarField.constant(self.line, -3.0)
        for p in (1.0, 2.0, 7.5, np.inf):
            assert lp_norm(const, p) == pytest.approx(3.0)
        assert lp_norm(self.sine, 2.0) == pytest.approx(1 / np.sqrt(2))
        assert lp_norm(self.sine, np.inf) == pytest.approx(1.0)

    def test_lp_is_monotone_in_p(self):
        u = build_initial("band_limited", TorusGrid(2, 16), {"seed": 9})
        norms = [lp_norm(u, p) for p in (1.0, 2.0, 4.0, np.inf)]
        assert norms == sorted(norms)

    def test_quasi_norms_rejected(self):
        with pytest.raises(ValueError):
            lp_norm(self.sine, 0.5)

    def test_fft_moments_match_direct_sum(self):
        values = build_initial("band_limited", TorusGrid(1, 16), {"seed": 1}).values
        direct = np.array([np.mean(np.abs(np.roll(values, -j) - values) ** 2) for j in range(16)])
        np.testing.assert_allclose(_difference_moments(values, 2.0), direct, atol=1e-12)

    def test_gagliardo_basic_properties(self):
        assert gagliardo_seminorm(ScalarField.constant(self.line, 2.0), 0.5, 2.0) == pytest.approx(0.0, abs=1e-12)
        doubled = self.sine.with_values(2.0 * self.sine.values)
        assert gagliardo_seminorm(doubled, 0.5, 2.0) == pytest.approx(2.0 * gagliardo_seminorm(self.sine, 0.5, 2.0))
        assert gagliardo_seminorm(self.sine, 0.3, 2.0) < gagliardo_seminorm(self.sine, 0.7, 2.0)

    def test_gagliardo_non_quadratic_p(self):
        small = TorusGrid(1, 16)
        value = gagliardo_seminorm(build_initial("sin", small), 0.5, 3.0)
        assert np.isfinite(value) and value > 0

    def test_gagliardo_validation(self):
        with pytest.raises(ValueError):
            gagliardo_seminorm(self.sine, 1.0, 2.0)
        with pytest.raises(ValueError):
            gagliardo_seminorm(self.sine, 0.5, 0.5)


class TestHajlaszBracket:
    def setup_method(self):
        self.line = TorusGrid(1, 32)
        self.sine = build_initial("sin", self.line)

    def test_competitor_validation(self):
        with pytest.raises(ValueError):
            symmetric_competitor(self.sine, 1.5)

    def test_bracket_is_ordered(self):
        for p in (1.0, 2.0):
            bracket = hajlasz_bracket(self.sine, 0.5, p)
            assert 0.0 <= bracket.lower.value <= bracket.upper.value
            assert bracket.upper.kind == NormKind.FALPHA_UPPER
            assert bracket.witness.max_violation <= 1e-12

    def test_sup_exponent_bracket_is_tight_on_full_grid(self):
        bracket = hajlasz_bracket(self.sine, 0.5, np.inf)
        assert bracket.lower.value == pytest.approx(bracket.upper.value, rel=1e-12)

    def test_subsample_bounds(self):
        with pytest.raises(ValueError):
            hajlasz_bracket(self.sine, 0.5, 2.0, subsample=64)

    def test_falpha_norm_adds_lp_part(self):
        const = ScalarField.constant(self.line, 2.0)
        assert falpha_norm(const, 0.5, 2.0) == pytest.approx(2.0)

    def test_interpolation_constant(self):
        fields = [build_initial("band_limited", self.line, {"seed": s}) for s in range(3)]
        C, ratios = interpolation_constant(fields, 1.0, 0.5, 2.0)
        assert len(ratios) == 3
        assert C == max(ratios) > 0
        with pytest.raises(ValueError):
            interpolation_constant(fields, 1.0, 0.25, 2.0)


class TestMaximalAndBMO:
    def setup_method(self):
        self.plane = TorusGrid(2, 16)
        self.u = build_initial("band_limited", self.plane, {"seed": 3})

    def test_maximal_function_dominates(self):
        m = maximal_function(self.u)
        assert np.all(m.values >= np.abs(self.u.values) - 1e-12)
        const = maximal_function(ScalarField.constant(self.plane, -2.0))
        np.testing.assert_allclose(const.values, 2.0)

    def test_maximal_l2_constant_at_least_one(self):
        assert maximal_l2_constant([self.u, build_initial("sin", self.plane)]) >= 1.0

    def test_bmo_invariances(self):
        base = bmo_seminorm(self.u)
        assert bmo_seminorm(ScalarField.constant(self.plane, 5.0)) == pytest.approx(0.0, abs=1e-12)
        assert bmo_seminorm(self.u.with_values(self.u.values + 7.0)) == pytest.approx(base, rel=1e-9)
        assert bmo_seminorm(self.u.with_values(2.0 * self.u.values)) == pytest.approx(2.0 * base, rel=1e-9)

    def test_bmo_bounded_by_twice_sup(self):
        assert 0.0 < bmo_seminorm(self.u) <= 2.0 * self.u.sup()
        assert bmo_report(self.u).kind == NormKind.BMO


class TestLusinAndLogLipschitz:
    def setup_method(self):
        self.plane = TorusGrid(2, 32)

    def test_exponential_lusin_on_constant(self):
        fitted, _ = verify_exponential_lusin(ScalarField.constant(self.plane, 1.0), 1.0)
        assert fitted == 0.0

    def test_exponential_lusin_on_smooth_field(self):
        fitted, violation = verify_exponential_lusin(build_initial("sin", self.plane), 0.5, pairs=2000)
        assert fitted > 0
        assert np.isfinite(violation)
        with pytest.raises(ValueError):
            verify_exponential_lusin(build_initial("sin", self.plane), 0.0)

    def test_log_lipschitz_zero_for_constant_drift(self):
        b = build_drift("translation", self.plane).at(0.0)
        assert log_lipschitz_modulus(b, 1.0, 1.0) == 0.0

    def test_log_lipschitz_grows_with_amplitude(self):
        small = build_drift("shear", self.plane, {"amplitude": 0.5}).at(0.0)
        large = build_drift("shear", self.plane, {"amplitude": 1.0}).at(0.0)
        c_small = log_lipschitz_modulus(small, 1.0, 2.0, pairs=2000)
        c_large = log_lipschitz_modulus(large, 1.0, 2.0, pairs=2000)
        assert 0 < c_small <= c_large

    def test_log_lipschitz_validation(self):
        with pytest.raises(ValueError):
            log_lipschitz_modulus(VectorField.zeros(self.plane), 0.0, 1.0)


class TestNormReport:
    def test_row_layout(self):
        report = NormReport(kind=NormKind.LP, p=2.0, value=1.5, N=32)
        row = report.to_row()
        assert list(row) == NormReport.CSV_COLUMNS
        assert row["kind"] == "Lp"

    def test_negative_value_rejected(self):
        with pytest.raises(ValidationError):
            NormReport(kind=NormKind.LP, value=-1.0, N=32)
