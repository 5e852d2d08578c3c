# regularity_lab/numerics/euler2d.py
"""
Pseudo-spectral 2D Euler in vorticity form on T^2.

Conventions: omega = d_1 b_2 - d_2 b_1, b = grad^perp psi = (-d_2 psi, d_1 psi),
Laplace psi = omega. The periodic Biot-Savart kernel is applied as its
Fourier multiplier; time stepping is RK4 with the 2/3 rule at every stage.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from regularity_lab.app.core.errors import NumericalFailure
from regularity_lab.numerics.families import mollify
from regularity_lab.numerics.field_io import write_field
from regularity_lab.numerics.flow_engine import RegularityProfile
from regularity_lab.numerics.norms import _squared_shift_norms, gagliardo_seminorm
from regularity_lab.numerics.torus_core import (
    ScalarField,
    TimeDependentField,
    TorusGrid,
    VectorField,
    _derivative_symbols,
    _fftn,
    _ifftn,
    gradient_magnitude,
)
from regularity_lab.numerics.transport import (
    LADDER_STEPS,
    DecayResult,
    _fit_rational,
    _largest_feasible,
    regularity_decay_experiment,
    solve_transport,
)

logger = logging.getLogger(__name__)

MEAN_TOL = 1e-12
BMO_FLOOR = 2.0


@dataclass(frozen=True)
class VorticityState:
    omega: ScalarField
    time: float = 0.0
    meta: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.omega.grid.dim != 2:
            raise ValueError("Euler runs on T^2")
        mean = self.omega.mean()
        if abs(mean) > MEAN_TOL * max(1.0, self.omega.sup()):
            raise ValueError(f"vorticity must have zero mean, got {mean:.3e}")

    @classmethod
    def from_values(cls, grid: TorusGrid, values: np.ndarray, time: float = 0.0, remove_mean: bool = True,
                    meta: Optional[Dict[str, float]] = None) -> "VorticityState":
        values = np.asarray(values, dtype=float)
        if remove_mean:
            values = values - np.mean(values)
        return cls(ScalarField(grid, values), time, dict(meta or {}))

    @property
    def grid(self) -> TorusGrid:
        return self.omega.grid

    def spectrum(self) -> np.ndarray:
        return self.omega.spectrum()


@lru_cache(maxsize=8)
def _inverse_laplacian_symbols(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    i kappa_2 / |kappa|^2 and -i kappa_1 / |kappa|^2 with the mean mode zeroed
    """
    k1, k2 = TorusGrid(2, n).wavenumbers()
    k_sq = k1 ** 2 + k2 ** 2
    safe = np.where(k_sq == 0, 1.0, k_sq)
    s1 = np.where(k_sq == 0, 0.0, 1j * k2 / safe)
    s2 = np.where(k_sq == 0, 0.0, -1j * k1 / safe)
    return s1, s2


@lru_cache(maxsize=8)
def dealias_mask(n: int) -> np.ndarray:
    """
    2/3 rule: keep integer modes with |k_i| < N/3 on both axes
    """
    k1, k2 = TorusGrid(2, n).integer_wavenumbers()
    return ((np.abs(k1) < n / 3.0) & (np.abs(k2) < n / 3.0)).astype(float)


def _velocity_from_spectrum(omega_hat: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    s1, s2 = _inverse_laplacian_symbols(n)
    return _ifftn(s1 * omega_hat), _ifftn(s2 * omega_hat)


def biot_savart(state: Union[VorticityState, ScalarField], div_tol: float = 1e-8) -> VectorField:
    """
    b = K * omega as the multiplier i kappa^perp / |kappa|^2, mean mode dropped
    """
    omega = state.omega if isinstance(state, VorticityState) else state
    if omega.grid.dim != 2:
        raise ValueError("Biot-Savart is defined on T^2")
    mean = omega.mean()
    if abs(mean) > MEAN_TOL * max(1.0, omega.sup()):
        raise ValueError(f"Biot-Savart needs zero-mean vorticity, got mean {mean:.3e}")
    b1, b2 = _velocity_from_spectrum(omega.spectrum(), omega.grid.points_per_axis)
    return VectorField(omega.grid, (b1, b2), True, div_tol)


def curl(b: VectorField) -> ScalarField:
    symbols = _derivative_symbols(2, b.grid.points_per_axis)
    return ScalarField(b.grid, _ifftn(symbols[0] * _fftn(b.components[1]) - symbols[1] * _fftn(b.components[0])))


def _rhs(omega_hat: np.ndarray, n: int, mask: np.ndarray) -> np.ndarray:
    """
    Spectral -b . grad omega with the 2/3 mask on input and output
    """
    omega_hat = omega_hat * mask
    b1, b2 = _velocity_from_spectrum(omega_hat, n)
    d1, d2 = _derivative_symbols(2, n)
    advection = b1 * _ifftn(d1 * omega_hat) + b2 * _ifftn(d2 * omega_hat)
    out = -_fftn(advection) * mask
    out[0, 0] = 0.0
    return out


def admissible_dt(state: VorticityState, cfl: float = 0.5) -> float:
    speed = biot_savart(state).sup()
    return float("inf") if speed == 0 else cfl * state.grid.spacing / speed


def _rk4_spectral(omega_hat: np.ndarray, dt: float, n: int) -> np.ndarray:
    mask = dealias_mask(n)
    k1 = _rhs(omega_hat, n, mask)
    k2 = _rhs(omega_hat + 0.5 * dt * k1, n, mask)
    k3 = _rhs(omega_hat + 0.5 * dt * k2, n, mask)
    k4 = _rhs(omega_hat + dt * k3, n, mask)
    out = omega_hat + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[0, 0] = 0.0
    return out


def step_euler(state: VorticityState, dt: float, cfl: float = 0.5) -> VorticityState:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    limit = admissible_dt(state, cfl)
    if dt > limit:
        raise NumericalFailure(f"dt={dt:.3e} violates the CFL condition", {"admissible_dt": limit, "cfl": cfl})
    n = state.grid.points_per_axis
    omega_hat = _rk4_spectral(state.spectrum(), dt, n)
    return VorticityState(ScalarField(state.grid, _ifftn(omega_hat)), state.time + dt, dict(state.meta))


def energy(state: VorticityState) -> float:
    return float(np.mean(biot_savart(state).stacked() ** 2) * 2.0)


def enstrophy(state: VorticityState) -> float:
    return float(np.mean(state.omega.values ** 2))


@dataclass
class EulerTrajectory:
    states: List[VorticityState]
    diagnostics: pd.DataFrame
    dt_history: List[float] = field(default_factory=list)

    @property
    def times(self) -> List[float]:
        return [s.time for s in self.states]

    def velocities(self) -> List[VectorField]:
        return [biot_savart(s) for s in self.states]

    def drift(self) -> TimeDependentField:
        """
        The self-generated drift b_t = K * omega_t, linear in time between snapshots
        """
        return TimeDependentField.sampled(self.times, self.velocities(), name="euler-self")

    def save(self, directory: Union[str, Path]) -> List[Path]:
        directory = Path(directory)
        paths = []
        for state, row in zip(self.states, self.diagnostics.to_dict("records")):
            meta = {"N": state.grid.points_per_axis, **{k: float(v) for k, v in row.items()}}
            paths.append(write_field(state.omega, directory / f"omega_t{state.time:.6f}.bin",
                                     name="omega", time=state.time, provenance=meta))
        return paths


def run_euler(omega0: VorticityState, T: float, snapshot_times: Optional[Sequence[float]] = None,
              cfl: float = 0.5, advection_tol: float = 1e-2) -> EulerTrajectory:
    """
    RK4 trajectory hitting every snapshot time exactly, each step at the
    admissible CFL step or shorter
    """
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    targets = sorted({float(t) for t in (snapshot_times or [])} | {float(T)})
    if targets[0] <= omega0.time:
        raise ValueError("snapshot times must be positive")
    states = [omega0]
    e0, z0, sup0 = energy(omega0), enstrophy(omega0), omega0.omega.sup()
    rows = [_diagnostic_row(omega0, e0, z0)]
    dts = []
    state = omega0
    for target in targets:
        while target - state.time > 1e-14:
            dt = min(admissible_dt(state, cfl), target - state.time)
            state = step_euler(state, dt, cfl)
            dts.append(dt)
        state = VorticityState(state.omega, target, dict(state.meta))
        states.append(state)
        rows.append(_diagnostic_row(state, e0, z0))
        if state.omega.sup() > sup0 * (1.0 + advection_tol):
            logger.warning(f"Sup norm {state.omega.sup():.5f} exceeds initial {sup0:.5f} beyond advection_tol at t={target:g}")
    diagnostics = pd.DataFrame(rows)
    logger.info(f"Euler run to T={T:g} in {len(dts)} steps; max energy drift "
                f"{diagnostics['energy_drift'].abs().max():.3e}, enstrophy drift {diagnostics['enstrophy_drift'].abs().max():.3e}")
    return EulerTrajectory(states, diagnostics, dts)


def _diagnostic_row(state: VorticityState, e0: float, z0: float) -> Dict[str, float]:
    e, z = energy(state), enstrophy(state)
    return {
        "t": state.time,
        "mean": state.omega.mean(),
        "energy": e,
        "enstrophy": z,
        "sup": state.omega.sup(),
        "energy_drift": (e - e0) / e0 if e0 > 0 else 0.0,
        "enstrophy_drift": (z - z0) / z0 if z0 > 0 else 0.0,
    }


def _log_exp_mean(grad: np.ndarray, scale: float) -> float:
    return float(logsumexp(grad.ravel() / scale) - np.log(grad.size))


def exp_integrability_monitor(trajectory: EulerTrajectory, omega0_sup: float,
                              floor: float = BMO_FLOOR) -> Tuple[float, pd.DataFrame]:
    """
    Smallest C >= floor with mean exp(|grad b_t| / (C ||omega_0||_inf)) <= C
    at every snapshot, with the per-time slack
    """
    grads = [gradient_magnitude(b).values for b in trajectory.velocities()]
    times = trajectory.times
    if omega0_sup <= 0:
        table = pd.DataFrame({"t": times, "integral": [1.0] * len(times), "slack": [floor - 1.0] * len(times)})
        return floor, table

    def excess(C: float) -> float:
        return max(_log_exp_mean(g, C * omega0_sup) for g in grads) - np.log(C)

    if excess(floor) <= 0:
        C = floor
    else:
        lo, hi = floor, 2.0 * floor
        while excess(hi) > 0:
            lo, hi = hi, 2.0 * hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if excess(mid) > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-10 * hi:
                break
        C = hi
    integrals = [float(np.exp(_log_exp_mean(g, C * omega0_sup))) for g in grads]
    table = pd.DataFrame({"t": times, "integral": integrals, "slack": [C - i for i in integrals]})
    logger.info(f"Exponential-integrability monitor: C={C:.4f} over {len(times)} snapshots")
    return float(C), table


def smoothed_vortex_patch(grid: TorusGrid, radius: float = 0.2, center: Sequence[float] = (0.5, 0.5),
                          mollify_scale: Optional[float] = None) -> VorticityState:
    """
    Disc indicator mollified at 4h by default, mean removed, scaled to sup 1
    """
    if not 0 < radius < 0.5:
        raise ValueError(f"radius must lie in (0, 1/2), got {radius}")
    scale = 4.0 * grid.spacing if mollify_scale is None else float(mollify_scale)
    x, y = grid.coordinates()
    dx = x - center[0]
    dy = y - center[1]
    dx -= np.round(dx)
    dy -= np.round(dy)
    disc = (dx ** 2 + dy ** 2 <= radius ** 2).astype(float)
    values = mollify(ScalarField(grid, disc), scale).values
    values = values - np.mean(values)
    values = values / np.max(np.abs(values))
    return VorticityState.from_values(grid, values, meta={"mollification_scale": scale})


def continuity_modulus(state: VorticityState, radii: Sequence[float]) -> List[float]:
    """
    sup over lattice shifts |h| <= r of ||omega(. + h) - omega||_inf
    """
    grid = state.grid
    values = state.omega.values
    sq = _squared_shift_norms(grid)
    n = grid.points_per_axis
    half = n // 2
    out = []
    for r in radii:
        k = r / grid.spacing
        best = 0.0
        for j in zip(*np.nonzero(sq <= k * k)):
            if not any(j):
                continue
            shift = tuple(-(int(i) if i <= half else int(i) - n) for i in j)
            best = max(best, float(np.max(np.abs(np.roll(values, shift, axis=(0, 1)) - values))))
        out.append(best)
    return out


@dataclass
class EulerDecayResult:
    profile: RegularityProfile
    trajectory: EulerTrajectory
    bmo_constant: float
    bound_table: pd.DataFrame
    transport: Optional[DecayResult] = None
    lagrangian_defect: Optional[float] = None


def vorticity_regularity_experiment(omega0: VorticityState, alpha: float, p: float, T: float,
                                    snapshots: int = 8, cfl: float = 0.5, cross_check: bool = True,
                                    dt0: float = 1e-2, tol_flow: float = 1e-7,
                                    mass_tol: float = 1e-3) -> EulerDecayResult:
    """
    Largest alpha' on the ladder with
    [omega_t]_{W^{alpha',p}} <= ||omega_0||_inf^{1-theta} [omega_0]_{W^{alpha,p}}^theta (C2 K)^{1/p},
    theta = alpha'/alpha, K the fitted exponential-integrability constant
    (divergence-free drift, L = 0), then the curve is fitted to
    alpha / (1 + C ||omega_0||_inf alpha p t).
    With cross_check the same omega_0 is also transported by the sampled
    drift and run through the transport decay experiment.
    """
    if not 0 < alpha < 1 or p < 1:
        raise ValueError("need 0 < alpha < 1 and p >= 1")
    times = list(np.linspace(0.0, T, snapshots + 1)[1:])
    traj = run_euler(omega0, T, times, cfl)
    sup0 = omega0.omega.sup()
    K, _ = exp_integrability_monitor(traj, sup0)
    ladder = alpha * np.arange(1, LADDER_STEPS + 1) / LADDER_STEPS
    gag0 = gagliardo_seminorm(omega0.omega, alpha, p)
    later = traj.states[1:]
    first = gagliardo_seminorm(later[0].omega, alpha, p)
    C2 = max(2.0, (first / gag0) ** p / K) if gag0 > 0 else 2.0
    growth = (C2 * K) ** (1.0 / p)

    curve, rows = [], []
    for state in later:
        e, bd, m = _largest_feasible(
            ladder, lambda s: gagliardo_seminorm(state.omega, s, p),
            lambda s: sup0 ** (1.0 - s / alpha) * gag0 ** (s / alpha) * growth)
        curve.append(e)
        rows.append({"t": state.time, "alpha_measured": e, "bound_value": bd, "measured_value": m,
                     "pass": bool(m <= bd * (1.0 + 1e-9))})
    arr = np.asarray(curve)
    t_arr = np.asarray([s.time for s in later])
    if np.all(arr >= ladder[-1]):
        profile = RegularityProfile(list(t_arr), curve, "constant", [alpha], 1.0, {"no_decay": True},
                                    {"K": K, "C2": C2})
    else:
        c, r2 = _fit_rational(t_arr, arr, alpha)
        C = c / (sup0 * alpha * p) if sup0 > 0 else 0.0
        profile = RegularityProfile(list(t_arr), curve, "rational", [alpha, c], r2, {"no_decay": False},
                                    {"K": K, "C2": C2, "C": C})
    table = pd.DataFrame(rows)
    table["alpha_predicted"] = _predicted_curve(profile, alpha, t_arr)
    table["slack"] = table["alpha_measured"] - table["alpha_predicted"]
    logger.info(f"Vorticity regularity: alpha(t)={np.round(arr, 4).tolist()}, model={profile.fit_model}")

    result = EulerDecayResult(profile, traj, K, table)
    if cross_check:
        drift = traj.drift()
        beta = 1.0 / (K * sup0) if sup0 > 0 else 1.0
        sol = solve_transport(drift, omega0.omega, times, dt0, tol_flow, mass_tol=mass_tol)
        result.transport = regularity_decay_experiment(drift, omega0.omega, alpha, p, beta, times, sol=sol)
        result.lagrangian_defect = float(np.max(np.abs(sol.at(times[0]).values - later[0].omega.values)))
    return result


def _predicted_curve(profile: RegularityProfile, alpha: float, times: np.ndarray) -> np.ndarray:
    if profile.fit_model == "constant":
        return np.full(len(times), alpha)
    return alpha / (1.0 + profile.fit_params[1] * times)
