# regularity_lab/app/experiments/patchwork.py
"""
Counterexample experiments: the growth of a truncated patchwork of mixing
cells and the log-space schedule tables.
"""
import logging
from typing import Any, Dict, List, Literal, Tuple, Union

import numpy as np
from mpmath import mp, mpf
from pydantic import BaseModel, Field, PositiveFloat, field_validator

from regularity_lab.app.core.errors import ConfigError
from regularity_lab.app.experiments.base import ExperimentOutput, Figure, build_patchwork, make_grid, parse_params
from regularity_lab.app.models.schemas import Claim, ExperimentConfig
from regularity_lab.numerics.counterexamples import (
    SCHEDULE_PRECISION_BITS,
    BuildingBlock,
    disjoint_sum_lower_bound,
    exp_integrand_identity,
    export_schedule,
    growth_report,
    parse_log_n,
    schedule_identity_residuals,
    schedule_is_monotone,
    schedule_kind,
    single_cell_growth,
)

logger = logging.getLogger(__name__)


class PatchworkGrowthParams(BaseModel):
    s: float = Field(default=0.5, gt=0, lt=1)
    p: float = Field(default=2.0, ge=1)
    lower_s: float = Field(default=0.3, gt=0, lt=1)
    lower_p: float = Field(default=1.0, ge=1)
    identity_beta: PositiveFloat = 0.1
    identity_tol: PositiveFloat = 1e-6
    min_block_r2: float = Field(default=0.9, ge=0, le=1)
    min_cell_r2: float = Field(default=0.9, ge=0, le=1)
    rate_tol: PositiveFloat = 0.25
    frozen_tol: PositiveFloat = 1e-8
    single_cell: bool = True
    cell_lam: PositiveFloat = 0.5
    cell_taus: List[PositiveFloat] = Field(default_factory=lambda: [1.0, 0.5], min_length=1)


class ScheduleParams(BaseModel):
    kind: Literal["instant_loss", "sharp_decay", "lipschitz_loss", "thm31", "thm32", "thm33"] = "sharp_decay"
    schedule: Dict[str, Any] = Field(default_factory=dict)
    log_n: List[Union[float, str]] = Field(default_factory=lambda: ["exp:6", "exp:7", "exp:8"], min_length=1)
    identity_bits: int = Field(default=200, ge=1, le=SCHEDULE_PRECISION_BITS)

    @field_validator("kind")
    @classmethod
    def canonical_kind(cls, kind: str) -> str:
        return schedule_kind(kind)


def _relative_gap(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def _doubling_pairs(taus: List[float]) -> List[Tuple[int, int]]:
    """
    (i, j) with tau_i = 2 tau_j
    """
    return [(i, j) for i in range(len(taus)) for j in range(len(taus))
            if i != j and abs(taus[i] - 2.0 * taus[j]) <= 1e-9 * taus[i]]


def _check_rate_ratios(out: ExperimentOutput, label: str, taus: List[float], rates: List[float],
                       tol: float) -> None:
    for i, j in _doubling_pairs(taus):
        ratio = rates[j] / rates[i] if rates[i] != 0 else float("inf")
        out.check(Claim.MIXING_BLOCK, f"{label}: rate at tau={taus[j]:g} is twice the rate at tau={taus[i]:g}",
                  abs(ratio - 2.0) <= 2.0 * tol, ratio, 2.0)


def _check_single_cells(out: ExperimentOutput, config: ExperimentConfig, block: BuildingBlock,
                        params: PatchworkGrowthParams) -> None:
    tol = config.tolerances
    try:
        table = single_cell_growth(block, params.cell_lam, params.cell_taus, s=params.s, p=params.p, dt0=tol.dt0,
                                   tol_flow=tol.tol_flow, max_halvings=tol.max_halvings, mass_tol=tol.mass_tol)
    except ValueError as exc:
        raise ConfigError(str(exc), "params.cell_lam") from exc
    out.tables["single_cell"] = table
    for row in table.to_dict("records"):
        tau = row["tau"]
        out.check(Claim.MIXING_BLOCK, f"single cell at tau={tau:g} grows exponentially",
                  row["r2"] >= params.min_cell_r2, row["r2"], params.min_cell_r2)
        gap = abs(row["rate_fit"] - row["rate_predicted"])
        bound = params.rate_tol * abs(row["rate_predicted"])
        out.check(Claim.MIXING_BLOCK, f"single cell at tau={tau:g} grows at c s / tau", gap <= bound,
                  row["rate_fit"], row["rate_predicted"])
        out.constants[f"single_cell.tau{tau:g}.rate"] = row["rate_fit"]
    _check_rate_ratios(out, "single cell", table["tau"].tolist(), table["rate_fit"].tolist(), params.rate_tol)


def run_patchwork_growth(config: ExperimentConfig) -> ExperimentOutput:
    params = parse_params(PatchworkGrowthParams, config)
    if config.drift.family != "patchwork":
        raise ConfigError("patchwork growth needs the patchwork drift", "drift.family")
    out = ExperimentOutput()
    grid = make_grid(config)
    pw = build_patchwork(config, grid, config.drift.params)
    block = pw.block
    out.constants.update({"block.c": block.measured_c, "block.r2": block.fit_r2,
                          "block.v_w1inf": block.measured_norm_bounds[0],
                          "block.rho_inf": block.measured_norm_bounds[1]})
    out.check(Claim.MIXING_BLOCK, "block seminorm grows exponentially", block.fit_r2 >= params.min_block_r2,
              block.fit_r2, params.min_block_r2)

    report = growth_report(pw.solution, pw.spec, block, params.s, params.p)
    out.tables["growth"] = report
    active = []
    for n, rows in report.groupby("cell"):
        values = rows["seminorm"].to_numpy()
        out.figures[f"cell{n}_seminorm"] = Figure(rows["t"].tolist(), values.tolist(), "t", "seminorm")
        if pw.spec.frozen[n]:
            change = float(np.max(np.abs(values - values[0])) / max(values[0], 1e-300))
            out.check(Claim.MIXING_BLOCK, f"frozen cell {n} keeps its seminorm", change <= params.frozen_tol,
                      change, params.frozen_tol)
        else:
            out.check(Claim.MIXING_BLOCK, f"active cell {n} seminorm grows", values[-1] > values[0],
                      float(values[-1]), float(values[0]))
            out.constants[f"cell{n}.rate"] = float(rows["rate_fit"].iloc[0])
            active.append(n)
    # equal lam and gamma: the rate depends on tau alone
    spec = pw.spec
    for key in sorted({(spec.lams[n], spec.gams[n]) for n in active}):
        same = [n for n in active if (spec.lams[n], spec.gams[n]) == key]
        _check_rate_ratios(out, f"patchwork cells of side {key[0]:g}", [spec.taus[n] for n in same],
                           [out.constants[f"cell{n}.rate"] for n in same], params.rate_tol)

    if params.single_cell:
        _check_single_cells(out, config, block, params)

    for n, cell in enumerate(pw.cells):
        ratio = cell.identities["grad_ratio"]
        out.check(Claim.RESCALING, f"sup|grad v_n| tau_n = sup|grad v| for cell {n}",
                  abs(ratio - 1.0) <= params.identity_tol, ratio, 1.0)
        gap = _relative_gap(cell.identities["lp_lhs"], cell.identities["lp_rhs"])
        out.check(Claim.RESCALING, f"||rho_n||_1 = gamma lambda^d ||rho||_1 for cell {n}",
                  gap <= params.identity_tol, gap, params.identity_tol)
        lhs, rhs = exp_integrand_identity(block, cell.lam, cell.tau, params.identity_beta, 0.0, cell.center)
        gap = _relative_gap(lhs, rhs)
        out.check(Claim.RESCALING, f"exponential integrand change of variables for cell {n}",
                  gap <= params.identity_tol, gap, params.identity_tol)

    lower, direct = disjoint_sum_lower_bound([(c.rho.initial, c.lam) for c in pw.cells],
                                             params.lower_s, params.lower_p)
    out.check(Claim.DISJOINT_SUM, f"direct seminorm above the disjoint-sum bound (s={params.lower_s:g})",
              direct >= lower, direct, lower)
    out.constants.update({"disjoint_sum.lower": lower, "disjoint_sum.direct": direct})
    return out


def run_schedule_table(config: ExperimentConfig) -> ExperimentOutput:
    params = parse_params(ScheduleParams, config)
    out = ExperimentOutput()
    try:
        table = export_schedule(params.kind, params.schedule, params.log_n)
    except ValueError as exc:
        raise ConfigError(str(exc), "params.schedule") from exc
    out.tables["schedule"] = table
    valid = [v for v, ok in zip(params.log_n, table["valid"]) if ok]
    out.check(Claim.SCHEDULE, "at least one schedule value above the validity threshold", len(valid) > 0,
              float(len(valid)), 1.0)
    if len(valid) >= 2:
        out.check(Claim.SCHEDULE, "gamma, tau and lambda strictly decrease in n",
                  schedule_is_monotone(params.kind, params.schedule, valid))
    in_range = table.loc[table["valid"], "in_range"]
    out.check(Claim.SCHEDULE, "valid values lie below 1/10", bool(in_range.all()))

    with mp.workprec(SCHEDULE_PRECISION_BITS):
        tolerance = mpf(2) ** (-params.identity_bits)
        for log_n in valid:
            residuals = schedule_identity_residuals(params.kind, params.schedule, log_n)
            scale = max(mpf(1), parse_log_n(log_n) ** 2)
            for name, residual in residuals.items():
                out.check(Claim.SCHEDULE, f"{name} at log n = {log_n}", residual <= tolerance * scale,
                          float(residual), float(tolerance * scale))

    rows = table[table["valid"]]
    out.figures["log_lambda"] = Figure([float(v) for v in rows["log_n"]], [float(v) for v in rows["log_lambda"]],
                                       "log n", "log lambda_n")
    return out
