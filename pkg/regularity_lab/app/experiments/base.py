# regularity_lab/app/experiments/base.py
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from regularity_lab.app.core.errors import ConfigError
from regularity_lab.app.models.schemas import Claim, ExperimentConfig, Verdict, config_error
from regularity_lab.numerics.counterexamples import (
    BuildingBlock,
    PatchworkSpec,
    RescaledCell,
    assemble_patchwork,
    make_shear_mixer_block,
    place_cells,
)
from regularity_lab.numerics.euler2d import VorticityState, run_euler
from regularity_lab.numerics.families import build_drift, build_initial
from regularity_lab.numerics.flow_engine import RegularityProfile
from regularity_lab.numerics.norms import NormReport
from regularity_lab.numerics.torus_core import ScalarField, TimeDependentField, TorusGrid
from regularity_lab.numerics.transport import TransportSolution

logger = logging.getLogger(__name__)

P = TypeVar("P", bound=BaseModel)


@dataclass
class Figure:
    """
    Two-column series for one plot
    """
    x: List[float]
    y: List[float]
    xlabel: str
    ylabel: str


@dataclass
class ExperimentOutput:
    reports: List[NormReport] = field(default_factory=list)
    profiles: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    verdicts: List[Verdict] = field(default_factory=list)
    constants: Dict[str, float] = field(default_factory=dict)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    figures: Dict[str, Figure] = field(default_factory=dict)
    halvings: int = 0

    def check(self, claim: Claim, name: str, passed: bool, measured: Optional[float] = None,
              bound: Optional[float] = None, detail: str = "") -> Verdict:
        verdict = Verdict(claim=claim, name=name, passed=bool(passed),
                          measured=finite_or_none(measured), bound=finite_or_none(bound), detail=detail)
        self.verdicts.append(verdict)
        level = logging.INFO if verdict.passed else logging.WARNING
        logger.log(level, f"[{claim.value}] {name}: {'pass' if verdict.passed else 'FAIL'}"
                          + (f" (measured={measured:.6g}, bound={bound:.6g})"
                             if measured is not None and bound is not None else ""))
        return verdict

    def add_profile(self, name: str, profile: RegularityProfile, figure_label: str):
        self.profiles[name] = plain(dataclasses.asdict(profile))
        self.tables[f"{name}_profile"] = profile.to_frame()
        self.figures[name] = Figure(list(profile.times), list(profile.exponent_curve), "t", figure_label)
        for key, value in profile.constants.items():
            self.constants[f"{name}.{key}"] = plain(value)


def plain(value: Any) -> Any:
    """
    numpy scalars and containers as plain JSON-friendly Python values
    """
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None or not np.isfinite(value):
        return None
    return float(value)


def parse_params(model: Type[P], config: ExperimentConfig) -> P:
    try:
        return model.model_validate(config.params)
    except ValidationError as exc:
        raise config_error(exc, "params") from exc


def make_grid(config: ExperimentConfig) -> TorusGrid:
    return TorusGrid(config.grid.dim, config.grid.points_per_axis)


def horizon_of(config: ExperimentConfig) -> float:
    return float(max(config.times))


def make_initial(config: ExperimentConfig, grid: TorusGrid) -> ScalarField:
    try:
        return build_initial(config.initial.family, grid, config.initial.params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), "initial") from exc


class PatchworkParams(BaseModel):
    lams: List[float] = [0.04, 0.03, 0.02]
    taus: List[float] = [1.0, 0.5, 0.25]
    gams: List[float] = [1.0, 1.0, 1.0]
    frozen: List[bool] = []
    block_points: int = 64
    modes: int = 1
    switch_period: float = 1.0
    cutoff_width: float = 0.05
    amplitude: float = 0.5
    block_horizon: float = 4.0
    block_snapshots: int = 16
    s: float = 0.5
    require_growth: bool = True


@dataclass
class Patchwork:
    block: BuildingBlock
    spec: PatchworkSpec
    drift: TimeDependentField
    solution: TransportSolution
    cells: List[RescaledCell]


def build_patchwork(config: ExperimentConfig, grid: TorusGrid, params: Dict[str, Any],
                    prefix: str = "drift.params") -> Patchwork:
    """
    Building block, placed cells and the transported patchwork density
    """
    try:
        pw = PatchworkParams.model_validate(params)
    except ValidationError as exc:
        raise config_error(exc, prefix) from exc
    if grid.dim != 2:
        raise ConfigError("patchworks live on T^2", "grid.dim")
    tol = config.tolerances
    try:
        block_grid = TorusGrid(2, pw.block_points)
        block = make_shear_mixer_block(block_grid, pw.modes, pw.switch_period, pw.cutoff_width, pw.block_horizon,
                                       pw.amplitude, pw.s, pw.block_snapshots, tol.dt0, tol.tol_flow,
                                       tol.max_halvings, tol.div_tol, tol.mass_tol, pw.require_growth)
        spec = place_cells(pw.lams, pw.taus, pw.gams, 2, grid, pw.frozen or None)
    except ValueError as exc:
        raise ConfigError(str(exc), prefix) from exc
    horizon = min(tau * block.horizon for tau in spec.taus)
    if horizon_of(config) > horizon + 1e-12:
        raise ConfigError(f"times exceed the shortest cell horizon {horizon:g}", "times")
    b, u, cells = assemble_patchwork(block, spec, grid, config.times, tol.dt0, tol.tol_flow,
                                     tol.max_halvings, tol.div_tol, tol.mass_tol)
    return Patchwork(block, spec, b, u, cells)


def make_drift(config: ExperimentConfig, grid: TorusGrid,
               u0: Optional[ScalarField] = None) -> Tuple[TimeDependentField, Optional[TransportSolution]]:
    """
    The configured drift, with the transported density when the drift
    family produces one itself (patchwork)
    """
    family = config.drift.family
    horizon = horizon_of(config)
    tol = config.tolerances
    if family == "patchwork":
        pw = build_patchwork(config, grid, config.drift.params)
        return pw.drift, pw.solution
    if family == "euler_self":
        if grid.dim != 2 or u0 is None:
            raise ConfigError("the Euler self-drift needs 2D initial vorticity", "drift.family")
        omega0 = VorticityState.from_values(grid, u0.values)
        traj = run_euler(omega0, horizon, config.times, tol.cfl, tol.advection_tol)
        return traj.drift(), None
    try:
        return build_drift(family, grid, config.drift.params, horizon, tol.div_tol), None
    except ValueError as exc:
        raise ConfigError(str(exc), "drift") from exc
