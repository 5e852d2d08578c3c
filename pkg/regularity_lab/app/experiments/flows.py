# regularity_lab/app/experiments/flows.py
"""
Flow-map experiments: Lusin/Sobolev regularity of X_t, sharp Holder
exponents and the semigroup property.
"""
import logging
from typing import List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, PositiveFloat

from regularity_lab.app.core.errors import ConfigError
from regularity_lab.app.experiments.base import ExperimentOutput, horizon_of, make_drift, make_grid, parse_params
from regularity_lab.app.models.schemas import Claim, ExperimentConfig
from regularity_lab.numerics.flow_engine import (
    DEFAULT_Q_LADDER,
    DEFAULT_STENCIL_RADIUS,
    FlowMap,
    holder_profile,
    integrate_flow,
    jacobian_compressibility,
    lusin_bad_set,
    lusin_lipschitz_profile,
    lusin_restriction_check,
    semigroup_check,
    semigroup_power_check,
    sobolev_decay_profile,
    sobolev_exponent_horizon,
)
from regularity_lab.numerics.torus_core import TorusGrid, sup_exp_integrability, torus_distance

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
CLOSED_FORM_FAMILIES = ("zero", "translation", "shear")


class FlowRegularityParams(BaseModel):
    seeds_per_axis: Optional[int] = None
    beta: PositiveFloat = 1.0
    q_ladder: List[PositiveFloat] = Field(default_factory=lambda: list(DEFAULT_Q_LADDER), min_length=1)
    q_report: List[PositiveFloat] = Field(default_factory=lambda: [1.0, 2.0, 4.0])
    lusin_q: PositiveFloat = 1.0
    radius: int = Field(default=DEFAULT_STENCIL_RADIUS, ge=1)
    exact_tol: PositiveFloat = 1e-6
    min_r2: float = Field(default=0.9, ge=0, le=1)
    expect_lipschitz: Optional[bool] = None


class HolderParams(BaseModel):
    beta: PositiveFloat = 1.0
    seeds: Literal["lattice", "log"] = "lattice"
    seeds_per_axis: Optional[int] = None
    log_min: float = -8.0
    log_max: float = -2.0
    count: int = Field(default=64, ge=2)
    pairs: int = Field(default=4000, ge=2)
    expected: Optional[Literal["exp_decay", "lipschitz", "none"]] = None
    rel_tol: PositiveFloat = 0.05
    lipschitz_tol: PositiveFloat = 0.1


class SemigroupParams(BaseModel):
    t: PositiveFloat = 0.5
    s: PositiveFloat = 0.5
    seeds_per_axis: Optional[int] = None
    defect_tol: PositiveFloat = 1e-5
    power_delta: PositiveFloat = 0.25
    power_n: int = Field(default=2, ge=1)
    power_p: PositiveFloat = 2.0


def _seed_lattice(grid: TorusGrid, per_axis: Optional[int]) -> TorusGrid:
    try:
        return TorusGrid(grid.dim, per_axis or grid.points_per_axis)
    except ValueError as exc:
        raise ConfigError(str(exc), "params.seeds_per_axis") from exc


def closed_form_flow(family: str, params: dict, seeds: np.ndarray, t: float) -> np.ndarray:
    """
    Exact X_t for the drifts whose flow is known in closed form
    """
    if family == "zero":
        return seeds.copy()
    if family == "translation":
        velocity = np.asarray(params.get("velocity", [1.0] + [0.0] * (seeds.shape[1] - 1)), dtype=float)
        return np.mod(seeds + t * velocity, 1.0)
    if family == "shear":
        amp = float(params.get("amplitude", 1.0))
        moved = seeds.copy()
        moved[:, 0] = np.mod(seeds[:, 0] + amp * t * np.sin(TWO_PI * seeds[:, 1]), 1.0)
        return moved
    raise ValueError(f"no closed-form flow for drift family '{family}'")


def _halvings(flows: List[FlowMap]) -> int:
    return int(max(fm.meta.get("halvings", 0) for fm in flows))


def run_flow_regularity(config: ExperimentConfig) -> ExperimentOutput:
    params = parse_params(FlowRegularityParams, config)
    tol = config.tolerances
    out = ExperimentOutput()
    grid = make_grid(config)
    b, _ = make_drift(config, grid)
    seeds = _seed_lattice(grid, params.seeds_per_axis)
    flows = integrate_flow(b, seeds, horizon_of(config), tol.dt0, tol.tol_flow, config.times, tol.max_halvings)
    out.halvings = _halvings(flows)

    sample_times = [0.0] + list(config.times)
    L = b.sup_divergence(sample_times)
    K = sup_exp_integrability(b, params.beta, sample_times)
    out.constants.update({"L": L, "K": K, "beta": params.beta})

    rows = []
    for fm in flows:
        if config.drift.family in CLOSED_FORM_FAMILIES:
            exact = closed_form_flow(config.drift.family, config.drift.params, fm.seeds, fm.time)
            err = float(np.max(torus_distance(fm.positions, exact)))
            out.check(Claim.EXACT_FLOW, f"X_t against the closed form at t={fm.time:g}",
                      err < params.exact_tol, err, params.exact_tol)

        lo, hi, ok = jacobian_compressibility(fm, L, tol.tol_J)
        out.check(Claim.COMPRESSIBILITY, f"det DX_t within e^(+-tL) at t={fm.time:g}", ok,
                  detail=f"det in [{lo:.6f}, {hi:.6f}]")

        g, reports = lusin_lipschitz_profile(fm, params.q_report, params.radius)
        out.reports.extend(reports)
        lam = 2.0 * float(np.mean(g.values))
        measure, chebyshev = lusin_bad_set(g, lam, params.lusin_q)
        out.check(Claim.FLOW_LUSIN, f"|{{g >= lambda}}| below the Chebyshev bound at t={fm.time:g}",
                  measure <= chebyshev * (1.0 + 1e-12), measure, chebyshev)
        holds, worst = lusin_restriction_check(fm, g, lam, params.radius)
        out.check(Claim.FLOW_LUSIN, f"X_t is lambda-Lipschitz on {{g < lambda}} at t={fm.time:g}", holds,
                  detail=f"worst excess {worst:.3e}")
        rows.append({"t": fm.time, "det_min": lo, "det_max": hi, "lambda": lam, "bad_set": measure,
                     "chebyshev": chebyshev, "g_max": g.sup()})
    out.tables["lusin"] = pd.DataFrame(rows)

    profile = sobolev_decay_profile(flows, params.beta, K, L, params.q_ladder, radius=params.radius)
    out.add_profile("sobolev_exponent", profile, "q_t")
    lipschitz = profile.flags.get("lipschitz", False)
    if params.expect_lipschitz is not None:
        out.check(Claim.FLOW_SOBOLEV, "Lipschitz regime flag", lipschitz == params.expect_lipschitz,
                  detail=f"flag={lipschitz}, expected={params.expect_lipschitz}")
    elif not lipschitz:
        out.check(Claim.FLOW_SOBOLEV, "exponent curve fits A/t", profile.r_squared >= params.min_r2,
                  profile.r_squared, params.min_r2)
    else:
        out.check(Claim.FLOW_SOBOLEV, "exponent never decays", True, detail="Lipschitz regime")
    C = profile.constants["C"]
    out.constants["sobolev_horizon_q2"] = sobolev_exponent_horizon(params.beta, C, 2.0)
    return out


def _holder_seeds(params: HolderParams, grid: TorusGrid):
    if params.seeds == "lattice":
        return _seed_lattice(grid, params.seeds_per_axis), None
    if grid.dim != 1:
        raise ConfigError("logarithmic seeds need a 1D grid", "params.seeds")
    if params.log_min >= params.log_max:
        raise ConfigError("log_min must be below log_max", "params.log_min")
    points = np.concatenate([[0.0], np.logspace(params.log_min, params.log_max, params.count)])
    return points.reshape(-1, 1), 0


def _expected_holder(config: ExperimentConfig, params: HolderParams) -> str:
    if params.expected is not None:
        return params.expected
    if config.drift.family == "log_drift":
        return "exp_decay"
    if config.drift.family in CLOSED_FORM_FAMILIES:
        return "lipschitz"
    return "none"


def run_holder(config: ExperimentConfig) -> ExperimentOutput:
    params = parse_params(HolderParams, config)
    tol = config.tolerances
    out = ExperimentOutput()
    grid = make_grid(config)
    b, _ = make_drift(config, grid)
    seeds, anchor = _holder_seeds(params, grid)
    flows = integrate_flow(b, seeds, horizon_of(config), tol.dt0, tol.tol_flow, config.times, tol.max_halvings)
    out.halvings = _halvings(flows)
    profile = holder_profile(flows, params.beta, anchor, params.pairs, config.seed)
    out.add_profile("holder_exponent", profile, "holder exponent")

    expected = _expected_holder(config, params)
    for t, e in zip(profile.times, profile.exponent_curve):
        if expected == "exp_decay":
            target = float(np.exp(-t))
            out.check(Claim.HOLDER_FLOW, f"exponent matches e^-t at t={t:g}",
                      abs(e - target) <= params.rel_tol * target, e, target)
        elif expected == "lipschitz":
            out.check(Claim.HOLDER_FLOW, f"bi-Lipschitz flow keeps exponent 1 at t={t:g}",
                      e >= 1.0 - params.lipschitz_tol, e, 1.0 - params.lipschitz_tol)
    if expected == "exp_decay":
        decreasing = bool(np.all(np.diff(profile.exponent_curve) <= 1e-9))
        out.check(Claim.HOLDER_FLOW, "exponent nonincreasing in t", decreasing)
    return out


def run_semigroup(config: ExperimentConfig) -> ExperimentOutput:
    params = parse_params(SemigroupParams, config)
    tol = config.tolerances
    out = ExperimentOutput()
    horizon = horizon_of(config)
    if params.t + params.s > horizon + 1e-12:
        raise ConfigError(f"t + s exceeds the largest configured time {horizon:g}", "params.t")
    if params.power_n * params.power_delta > horizon + 1e-12:
        raise ConfigError(f"n * delta exceeds the largest configured time {horizon:g}", "params.power_delta")
    grid = make_grid(config)
    b, _ = make_drift(config, grid)
    if not b.autonomous:
        raise ConfigError("the semigroup property needs a time-independent drift", "drift.family")
    seeds = _seed_lattice(grid, params.seeds_per_axis)

    defect = semigroup_check(b, params.t, params.s, seeds, tol.dt0, tol.tol_flow, tol.max_halvings)
    out.check(Claim.SEMIGROUP, f"X_(t+s) = X_t o X_s for t={params.t:g}, s={params.s:g}",
              defect < params.defect_tol, defect, params.defect_tol)
    power = semigroup_power_check(b, params.power_delta, params.power_n, params.power_p, seeds,
                                  tol.dt0, tol.tol_flow, tol.max_halvings)
    out.check(Claim.SEMIGROUP, f"iterated-composition bound for n={params.power_n}", bool(power["holds"]),
              power["lhs"], power["rhs"])
    out.constants.update({"defect": defect, "power_lhs": power["lhs"], "power_rhs": power["rhs"], "L": power["L"]})
    out.tables["semigroup"] = pd.DataFrame([{"t": params.t, "s": params.s, "defect": defect, **power}])
    return out
