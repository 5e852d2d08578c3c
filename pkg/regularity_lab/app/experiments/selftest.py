# regularity_lab/app/experiments/selftest.py
"""
Closed-form identities of the grid, the derivatives and the norms, checked
on the configured resolution.
"""
import logging

import numpy as np
from pydantic import BaseModel, PositiveFloat

from regularity_lab.app.experiments.base import ExperimentOutput, parse_params
from regularity_lab.app.models.schemas import Claim, ExperimentConfig
from regularity_lab.numerics.families import build_drift, build_initial
from regularity_lab.numerics.norms import (
    bmo_seminorm,
    gagliardo_seminorm,
    hajlasz_bracket,
    log_lipschitz_modulus,
    lp_norm,
    lp_report,
    maximal_function,
    verify_exponential_lusin,
)
from regularity_lab.numerics.torus_core import (
    ScalarField,
    TorusGrid,
    VectorField,
    divergence,
    exp_integrability,
    sample_field,
    spectral_gradient,
    torus_distance,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


class SelftestParams(BaseModel):
    constant: float = 3.0
    atol: PositiveFloat = 1e-10


def _close(out: ExperimentOutput, name: str, measured: float, expected: float, atol: float):
    out.check(Claim.NORM_IDENTITIES, name, abs(measured - expected) <= atol, measured, expected)


def _grid_identities(out: ExperimentOutput, line: TorusGrid, plane: TorusGrid, atol: float):
    _close(out, "torus distance wraps around", torus_distance(0.1, 0.9), 0.2, atol)
    _close(out, "torus distance of opposite corners", torus_distance([0.0, 0.0], [0.5, 0.5]), np.sqrt(0.5), atol)
    _close(out, "torus distance to itself", torus_distance([0.3, 0.7], [0.3, 0.7]), 0.0, atol)

    sine = build_initial("sin", line)
    grad = spectral_gradient(sine).components[0]
    _close(out, "d/dx sin(2 pi x) at 0", float(grad[0]), TWO_PI, atol * TWO_PI)
    flat = spectral_gradient(ScalarField.constant(line, 3.0)).components[0]
    _close(out, "gradient of a constant", float(np.max(np.abs(flat))), 0.0, atol)

    shear = build_drift("shear", plane).at(0.0)
    _close(out, "divergence of the shear", float(np.max(np.abs(divergence(shear).values))), 0.0, atol)

    h = line.spacing
    _close(out, "linear midpoint interpolation", float(sample_field(sine, 0.5 * h, "linear")),
           0.5 * (np.sin(0.0) + np.sin(TWO_PI * h)), atol)
    _close(out, "interpolated constant", float(sample_field(ScalarField.constant(plane, 2.5), [0.123, 0.456])),
           2.5, atol)

    _close(out, "exponential integrability of zero", exp_integrability(VectorField.zeros(plane), 1.0), 1.0, atol)
    _close(out, "exponential integrability as beta -> 0", exp_integrability(shear, 1e-12), 1.0, 1e-9)


def _norm_identities(out: ExperimentOutput, line: TorusGrid, c: float, atol: float, seed: int):
    const = ScalarField.constant(line, c)
    for p in (1.0, 2.0, np.inf):
        _close(out, f"L^{p:g} norm of a constant", lp_norm(const, p), abs(c), atol * abs(c))
        if np.isfinite(p):
            out.reports.append(lp_report(const, p))
    sine = build_initial("sin", line)
    _close(out, "L^2 norm of sin(2 pi x)", lp_norm(sine, 2.0), 1.0 / np.sqrt(2.0), 1e-6)

    _close(out, "Gagliardo seminorm of a constant", gagliardo_seminorm(const, 0.5, 2.0), 0.0, atol)
    bracket = hajlasz_bracket(const, 0.5, 2.0, seed=seed)
    _close(out, "F-class upper certificate of a constant", bracket.upper.value, 0.0, atol)
    _close(out, "F-class lower certificate of a constant", bracket.lower.value, 0.0, atol)

    _close(out, "maximal function of a constant", float(np.max(np.abs(maximal_function(const).values - abs(c)))),
           0.0, atol * abs(c))
    noisy = build_initial("band_limited", line, {"max_mode": 6, "seed": seed})
    dominance = float(np.min(maximal_function(noisy).values - np.abs(noisy.values)))
    out.check(Claim.NORM_IDENTITIES, "maximal function dominates |f|", dominance >= -1e-12, dominance, -1e-12)

    _close(out, "BMO seminorm of a constant", bmo_seminorm(const), 0.0, atol)
    osc = bmo_seminorm(sine)
    out.check(Claim.NORM_IDENTITIES, "BMO seminorm of sin(2 pi x) within (0, 2]", 0.0 < osc <= 2.0 + atol, osc, 2.0)

    fitted, _ = verify_exponential_lusin(const, 1.0, seed=seed)
    _close(out, "exponential Lusin constant of a constant", fitted, 0.0, atol)
    translation = build_drift("translation", line).at(0.0)
    _close(out, "log-Lipschitz modulus of a constant drift", log_lipschitz_modulus(translation, 1.0, 1.0, seed=seed),
           0.0, atol)


def run_norm_selftest(config: ExperimentConfig) -> ExperimentOutput:
    params = parse_params(SelftestParams, config)
    out = ExperimentOutput()
    n = config.grid.points_per_axis
    line, plane = TorusGrid(1, n), TorusGrid(2, n)
    _grid_identities(out, line, plane, params.atol)
    _norm_identities(out, line, params.constant, params.atol, config.seed)
    failed = sum(not v.passed for v in out.verdicts)
    logger.info(f"Self-test at N={n}: {len(out.verdicts) - failed}/{len(out.verdicts)} identities hold")
    return out
