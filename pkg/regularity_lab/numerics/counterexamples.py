# regularity_lab/numerics/counterexamples.py
"""
Counterexample machinery: a mixing building block made of alternating
shears, its exact rescalings, the log-space parameter schedules, truncated
patchworks of rescaled cells and the disjoint-sum lower bound.

The block lives in the chart Q = [-1/2, 1/2)^2 centred at the torus origin,
x = xi mod 1.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from mpmath import mp, mpf
from scipy.spatial import cKDTree
from sklearn.linear_model import LinearRegression

from regularity_lab.app.core.config import get_settings
from regularity_lab.app.core.errors import NumericalFailure
from regularity_lab.numerics.families import plateau
from regularity_lab.numerics.flow_engine import _r2
from regularity_lab.numerics.norms import _lp, gagliardo_seminorm, lp_norm
from regularity_lab.numerics.torus_core import (
    ScalarField,
    TimeDependentField,
    TorusGrid,
    VectorField,
    _derivative_symbols,
    _fftn,
    _ifftn,
    sample_field,
)
from regularity_lab.numerics.transport import TransportSolution, solve_transport

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
SCHEDULE_PRECISION_BITS = 256
SCHEDULE_DIGITS = 30
MIN_GROWTH_R2 = 0.8
SCHEDULE_KINDS = ("instant_loss", "sharp_decay", "lipschitz_loss")
SCHEDULE_ALIASES = {"thm31": "instant_loss", "thm32": "sharp_decay", "thm33": "lipschitz_loss"}
PHI_KINDS = ("identity", "power", "exp")
# surface measure of the unit sphere in R^d
SPHERE_AREA = {1: 2.0, 2: TWO_PI}


def chart_coordinates(points: np.ndarray, center: Sequence[float] = (0.0, 0.0), lam: float = 1.0) -> np.ndarray:
    """
    xi = wrap(x - center) / lam with wrap onto [-1/2, 1/2)
    """
    rel = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
    rel = rel - np.floor(rel + 0.5)
    return rel / lam


@dataclass(frozen=True)
class ShearMixer:
    """
    Stream function
        psi = A [sigma(t) cos(2 pi m xi_2 + th1) + (1 - sigma(t)) cos(2 pi m xi_1 + th2)] / (2 pi m)
              * phi(xi_1) phi(xi_2)
    with sigma switching smoothly between the two shears every half period
    and phi a plateau cutoff equal to 1 on |s| <= 1/2 - 2w, 0 on |s| >= 1/2 - w.
    """
    amplitude: float = 0.5
    modes: int = 1
    switch_period: float = 1.0
    cutoff_width: float = 0.05
    phase_1: float = 0.0
    phase_2: float = np.pi / 3.0

    def __post_init__(self):
        if not 0 < self.cutoff_width < 0.25:
            raise ValueError(f"cutoff_width must lie in (0, 1/4), got {self.cutoff_width}")
        if self.modes < 1:
            raise ValueError(f"modes must be >= 1, got {self.modes}")
        if self.switch_period <= 0:
            raise ValueError(f"switch_period must be positive, got {self.switch_period}")

    @property
    def steady(self) -> bool:
        return bool(np.isinf(self.switch_period))

    def sigma(self, t: float) -> float:
        if self.steady:
            return 1.0
        return float(0.5 * (1.0 + np.tanh(8.0 * np.sin(TWO_PI * t / self.switch_period))))

    def _cutoff(self, xi: np.ndarray):
        w = self.cutoff_width
        return [plateau(xi[:, i], 0.5 - 2.0 * w, 0.5 - w) for i in range(2)]

    def _parts(self, t: float, xi: np.ndarray):
        """
        F, its derivatives (F_1, F_2, F_11, F_22) and the cutoff pieces
        """
        sig = self.sigma(t)
        k = TWO_PI * self.modes
        a1 = k * xi[:, 0] + self.phase_2
        a2 = k * xi[:, 1] + self.phase_1
        F = sig * np.cos(a2) + (1.0 - sig) * np.cos(a1)
        F1 = -(1.0 - sig) * k * np.sin(a1)
        F2 = -sig * k * np.sin(a2)
        F11 = -(1.0 - sig) * k * k * np.cos(a1)
        F22 = -sig * k * k * np.cos(a2)
        return (F, F1, F2, F11, F22), self._cutoff(xi)

    @property
    def _scale(self) -> float:
        return self.amplitude / (TWO_PI * self.modes)

    def stream(self, t: float, xi: np.ndarray) -> np.ndarray:
        (F, *_), ((p1, _, _), (p2, _, _)) = self._parts(t, xi)
        return self._scale * F * p1 * p2

    def velocity(self, t: float, xi: np.ndarray) -> np.ndarray:
        """
        (-d_2 psi, d_1 psi) at (M, 2) chart points
        """
        (F, F1, F2, _, _), ((p1, d1, _), (p2, d2, _)) = self._parts(t, xi)
        psi_1 = self._scale * (F1 * p1 * p2 + F * d1 * p2)
        psi_2 = self._scale * (F2 * p1 * p2 + F * p1 * d2)
        return np.stack([-psi_2, psi_1], axis=-1)

    def jacobian(self, t: float, xi: np.ndarray) -> np.ndarray:
        """
        J[:, i, j] = d_j v_i at (M, 2) chart points
        """
        (F, F1, F2, F11, F22), ((p1, d1, s1), (p2, d2, s2)) = self._parts(t, xi)
        c = self._scale
        psi_11 = c * (F11 * p1 * p2 + 2.0 * F1 * d1 * p2 + F * s1 * p2)
        psi_22 = c * (F22 * p1 * p2 + 2.0 * F2 * p1 * d2 + F * p1 * s2)
        psi_12 = c * (F1 * p1 * d2 + F2 * d1 * p2 + F * d1 * d2)
        out = np.empty((len(xi), 2, 2))
        out[:, 0, 0] = -psi_12
        out[:, 0, 1] = -psi_22
        out[:, 1, 0] = psi_11
        out[:, 1, 1] = psi_12
        return out

    def rho0(self, xi: np.ndarray) -> np.ndarray:
        """
        Odd-in-xi_1 profile sin(2 pi xi_1) cut off inside the plateau of psi
        """
        outer = 0.5 - 2.0 * self.cutoff_width
        c1, _, _ = plateau(xi[:, 0], 0.5 * outer, outer)
        c2, _, _ = plateau(xi[:, 1], 0.5 * outer, outer)
        return np.sin(TWO_PI * xi[:, 0]) * c1 * c2


def _curl_of_stream(grid: TorusGrid, psi: np.ndarray, div_tol: float) -> VectorField:
    symbols = _derivative_symbols(grid.dim, grid.points_per_axis)
    psi_hat = _fftn(psi)
    return VectorField(grid, (-_ifftn(symbols[1] * psi_hat), _ifftn(symbols[0] * psi_hat)), True, div_tol)


@dataclass
class BuildingBlock:
    mixer: ShearMixer
    v: TimeDependentField
    rho: TransportSolution
    measured_c: float
    fit_r2: float
    measured_norm_bounds: Tuple[float, float]
    s: float = 0.5
    seminorms: List[float] = field(default_factory=list)

    @property
    def grid(self) -> TorusGrid:
        return self.v.grid

    @property
    def horizon(self) -> float:
        return self.v.horizon


def _mixer_field(mixer: ShearMixer, grid: TorusGrid, horizon: float, center=(0.0, 0.0), lam: float = 1.0,
                 tau: float = 1.0, div_tol: float = 1e-8, name: str = "shear-mixer") -> TimeDependentField:
    """
    v_n(t, x) = (lam / tau) v(t / tau, (x - center) / lam), zero outside the cell
    """
    xi_nodes = chart_coordinates(grid.points(), center, lam)
    inside_nodes = np.all(np.abs(xi_nodes) < 0.5, axis=1)

    def grid_rule(t: float) -> VectorField:
        psi = np.zeros(grid.size)
        psi[inside_nodes] = (lam * lam / tau) * mixer.stream(t / tau, xi_nodes[inside_nodes])
        return _curl_of_stream(grid, psi.reshape(grid.shape), div_tol)

    def point_rule(t: float, pts: np.ndarray) -> np.ndarray:
        xi = chart_coordinates(pts, center, lam)
        out = np.zeros_like(xi)
        inside = np.all(np.abs(xi) < 0.5, axis=1)
        out[inside] = (lam / tau) * mixer.velocity(t / tau, xi[inside])
        return out

    return TimeDependentField(grid, horizon, grid_rule, point_rule, autonomous=mixer.steady, name=name)


def _frobenius_sup(mixer: ShearMixer, t: float, xi: np.ndarray) -> float:
    return float(np.max(np.sqrt(np.sum(mixer.jacobian(t, xi) ** 2, axis=(1, 2)))))


def make_shear_mixer_block(grid: TorusGrid, modes: int = 1, switch_period: float = 1.0,
                           cutoff_width: float = 0.05, horizon: float = 4.0, amplitude: float = 0.5,
                           s: float = 0.5, snapshots: int = 16, dt0: float = 1e-2, tol_flow: float = 1e-7,
                           max_halvings: int = 8, div_tol: float = 1e-8, mass_tol: float = 1e-4,
                           require_growth: bool = True) -> BuildingBlock:
    """
    Build the block, transport rho0 over the horizon and fit the rate c in
    [rho_t]_{W^{s,2}} ~ exp(c s t)
    """
    if grid.dim != 2:
        raise ValueError("the building block lives on T^2")
    mixer = ShearMixer(amplitude, modes, switch_period, cutoff_width)
    v = _mixer_field(mixer, grid, horizon, div_tol=div_tol)
    xi = chart_coordinates(grid.points())
    rho0 = ScalarField(grid, mixer.rho0(xi).reshape(grid.shape))
    times = np.linspace(0.0, horizon, snapshots + 1)
    # building each sampled field enforces the divergence tolerance
    max_div = v.sup_divergence(times)
    logger.debug(f"Block velocity max |div| = {max_div:.3e}")
    rho = solve_transport(v, rho0, times[1:], dt0, tol_flow, max_halvings, mass_tol)

    outside = np.any(np.abs(xi) >= 0.5 - cutoff_width, axis=1)
    leak = max(float(np.max(np.abs(u.values.ravel()[outside]), initial=0.0)) for u in rho.snapshots)
    if leak > 0:
        raise NumericalFailure("transported density left the support of the block", {"leak": leak})
    seminorms = [gagliardo_seminorm(u, s, 2.0) for u in rho.snapshots]
    x = np.asarray(rho.times).reshape(-1, 1)
    y = np.log(seminorms)
    fit = LinearRegression().fit(x, y)
    measured_c = float(fit.coef_[0]) / s
    r2 = _r2(y, fit.predict(x))
    if r2 < MIN_GROWTH_R2 and require_growth:
        raise NumericalFailure("block does not exhibit exponential growth at this resolution",
                               {"r2": r2, "measured_c": measured_c, "N": grid.points_per_axis})

    v_bound = max(max(float(np.max(np.abs(mixer.velocity(t, xi)))), _frobenius_sup(mixer, t, xi)) for t in times)
    rho_bound = max(u.sup() for u in rho.snapshots)
    logger.info(f"Building block: c={measured_c:.4f} (R2={r2:.3f}), |v|_W1inf={v_bound:.3f}, |rho|_inf={rho_bound:.3f}")
    return BuildingBlock(mixer, v, rho, measured_c, r2, (v_bound, rho_bound), s, seminorms)


@dataclass
class RescaledCell:
    v: TimeDependentField
    rho: TransportSolution
    lam: float
    tau: float
    gam: float
    center: Tuple[float, ...]
    identities: Dict[str, float] = field(default_factory=dict)
    block: Optional[BuildingBlock] = None

    def density(self, points: np.ndarray, index: int = 0) -> np.ndarray:
        """
        gam rho(t_index, (x - x_n)/lam) at arbitrary points, zero outside the cell
        """
        xi = chart_coordinates(points, self.center, self.lam)
        inside = np.all(np.abs(xi) < 0.5, axis=1)
        out = np.zeros(len(xi))
        if np.any(inside):
            snapshot = self.block.rho.snapshots[index]
            out[inside] = self.gam * np.asarray(sample_field(snapshot, np.mod(xi[inside], 1.0)))
        return out


def _cube_in_quarter_ball(center: Sequence[float], side: float) -> bool:
    reach = np.abs(np.asarray(center, dtype=float) - 0.5) + 0.5 * side
    return bool(np.sqrt(np.sum(reach ** 2)) <= 0.25 + 1e-12)


def matched_points(block: BuildingBlock, lam: float, center: Sequence[float]) -> np.ndarray:
    """
    Images x_n + lam xi of the block's chart nodes xi
    """
    xi = chart_coordinates(block.grid.points())
    return np.mod(np.asarray(center, dtype=float) + lam * xi, 1.0)


def matched_grid(block: BuildingBlock, lam: float) -> TorusGrid:
    """
    Grid whose spacing is lam times the block spacing, so that a cell centred
    on a node carries the block's nodes
    """
    n = block.grid.points_per_axis / lam
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"lam={lam} does not divide the block grid of N={block.grid.points_per_axis}")
    return TorusGrid(block.grid.dim, int(round(n)))


def fd_gradient_magnitude(velocity: Callable[[np.ndarray], np.ndarray], points: np.ndarray,
                          h: float) -> np.ndarray:
    """
    Frobenius norm of the central-difference Jacobian of a point rule
    """
    total = np.zeros(len(points))
    for k in range(points.shape[1]):
        step = np.zeros(points.shape[1])
        step[k] = h
        diff = (velocity(np.mod(points + step, 1.0)) - velocity(np.mod(points - step, 1.0))) / (2.0 * h)
        total += np.sum(diff ** 2, axis=1)
    return np.sqrt(total)


def _gradient_pair(block: BuildingBlock, v_n: TimeDependentField, lam: float, tau: float, t: float,
                   center: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    |grad v_n(t)| at the matched points and |grad v(t/tau)| at the block nodes,
    both by central differences of the velocity fields
    """
    h = block.grid.spacing
    grad_n = fd_gradient_magnitude(lambda p: v_n.velocity(t, p), matched_points(block, lam, center), lam * h)
    grad = fd_gradient_magnitude(lambda p: block.v.velocity(t / tau, p), block.grid.points(), h)
    return grad_n, grad


def rescale_block(block: BuildingBlock, lam: float, tau: float, gam: float, center: Sequence[float],
                  grid: Optional[TorusGrid] = None, check_containment: bool = True,
                  div_tol: float = 1e-8) -> RescaledCell:
    """
    v_n(t, x) = (lam/tau) v(t/tau, (x - x_n)/lam), rho_n(t, x) = gam rho(t/tau, (x - x_n)/lam),
    rho_n sampled from the block snapshots at the rescaled times.

    The identities are measured on the block nodes pushed into the cell:
    sup|grad v_n| tau against sup|grad v| from the two velocity fields, and
    ||rho_n(0)||_1 against gam lam^d ||rho(0)||_1.
    """
    if lam <= 0 or tau <= 0 or gam <= 0:
        raise ValueError("lam, tau and gam must be positive")
    center = tuple(float(c) for c in center)
    if check_containment and not _cube_in_quarter_ball(center, lam):
        raise ValueError(f"cell of side {lam} at {center} escapes B_1/4")
    grid = grid or block.grid
    v_n = _mixer_field(block.mixer, grid, tau * block.horizon, center, lam, tau, div_tol, name=f"cell@{center}")
    cell = RescaledCell(v_n, None, lam, tau, gam, center, block=block)

    nodes = grid.points()
    snapshots = [ScalarField(grid, cell.density(nodes, k).reshape(grid.shape))
                 for k in range(len(block.rho.snapshots))]
    times = [tau * t for t in block.rho.times]
    cell.rho = TransportSolution(snapshots[0], times, snapshots, v_n.name)

    t_mid = block.rho.times[len(block.rho.times) // 2]
    grad_n, grad = _gradient_pair(block, v_n, lam, tau, tau * t_mid, center)
    sup_grad = float(np.max(grad))
    h = block.grid.spacing
    lhs = float(np.sum(np.abs(cell.density(matched_points(block, lam, center))))) * (lam * h) ** block.grid.dim
    rhs = gam * lam ** block.grid.dim * lp_norm(block.rho.initial, 1.0)
    cell.identities = {
        "grad_ratio": float(np.max(grad_n)) * tau / sup_grad if sup_grad > 0 else 1.0,
        "lp_lhs": lhs,
        "lp_rhs": rhs,
        "support_side": lam * (1.0 - 2.0 * block.mixer.cutoff_width),
    }
    logger.debug(f"Rescaled cell at {center}: lam={lam:g}, tau={tau:g}, gam={gam:g}, L1 {lhs:.6e} vs {rhs:.6e}")
    return cell


def exp_integrand_identity(block: BuildingBlock, lam: float, tau: float, beta: float, t: float,
                           center: Sequence[float]) -> Tuple[float, float]:
    """
    int_cell (exp(beta |grad v_n(t)|) - 1) over the matched points against
    lam^d int_Q (exp((beta/tau) |grad v(t/tau)|) - 1) on the block grid
    """
    v_n = _mixer_field(block.mixer, block.grid, tau * block.horizon, center, lam, tau)
    grad_n, grad = _gradient_pair(block, v_n, lam, tau, t, center)
    lhs = float(np.sum(np.expm1(beta * grad_n))) * (lam * block.grid.spacing) ** block.grid.dim
    rhs = float(lam ** block.grid.dim * np.mean(np.expm1(beta / tau * grad)))
    return lhs, rhs


# ---------------------------------------------------------------- schedules


def parse_log_n(value: Union[float, str, mpf]) -> mpf:
    """
    log n as a number, or "exp:x" for log n = e^x
    """
    with mp.workprec(SCHEDULE_PRECISION_BITS):
        if isinstance(value, str) and value.startswith("exp:"):
            return mp.exp(mpf(value[4:]))
        return mpf(value)


def schedule_kind(kind: str) -> str:
    """
    Canonical schedule name, accepting the short aliases
    """
    kind = SCHEDULE_ALIASES.get(kind, kind)
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule '{kind}', expected one of {SCHEDULE_KINDS + tuple(SCHEDULE_ALIASES)}")
    return kind


def _log_phi(kind: str, r, exponent: float):
    if kind == "identity":
        return mp.log(r)
    if kind == "power":
        return mpf(exponent) * mp.log(r)
    if kind == "exp":
        return r
    raise ValueError(f"unknown Phi kind '{kind}', expected one of {PHI_KINDS}")


def evaluate_schedule(kind: str, params: Optional[Dict[str, Any]] = None, n: Optional[int] = None,
                      log_n: Union[None, float, str, mpf] = None) -> Tuple[mpf, mpf, mpf]:
    """
    (log gamma_n, log tau_n, log lambda_n) in 256-bit arithmetic. Pass n as
    an integer of any size or log n directly.
    """
    kind = schedule_kind(kind)
    params = params or {}
    d = int(params.get("d", 2))
    c0 = mpf(params.get("c0", 1.0))
    with mp.workprec(SCHEDULE_PRECISION_BITS):
        if log_n is not None:
            ell = parse_log_n(log_n)
        elif n is not None:
            if n < 3:
                raise ValueError(f"n must be at least 3, got {n}")
            ell = mp.log(mpf(n))
        else:
            raise ValueError("pass either n or log_n")
        if kind == "instant_loss":
            if ell <= 1 or mp.log(ell) <= 1 or mp.log(mp.log(ell)) <= 1:
                raise ValueError("instant_loss requires n >= exp(exp(exp(exp(1))))")
            L2 = mp.log(ell)
            L3 = mp.log(L2)
            L4 = mp.log(L3)
            if L4 < 1:
                raise ValueError("instant_loss requires n >= exp(exp(exp(exp(1))))")
            log_gamma = -ell * L4
            log_tau = -(L2 + L4)
            log_lambda = -ell / d - ell / L3
        else:
            if ell < 100 * mp.log(10):
                raise ValueError(f"{kind} requires n >= 10^100")
            L2 = mp.log(ell)
            L3 = mp.log(L2)
            if kind == "sharp_decay":
                lam = mpf(params.get("lam", 1.0))
                m = int(params.get("m", 1))
                log_lambda = -ell * L3
                log_tau = mp.log(2 * c0 * lam) - L2 - mp.log(L3)
                log_gamma = m * log_lambda
            else:
                log_tau = -mp.log(L2)
                log_lambda = -2 * ell - _log_phi(params.get("phi", "identity"), c0 * L2,
                                                 float(params.get("phi_exponent", 1.0))) / d
                log_gamma = log_lambda - mp.log(L2)
        return +log_gamma, +log_tau, +log_lambda


def export_schedule(kind: str, params: Optional[Dict[str, Any]], log_n_values: Sequence[Union[float, str]]) -> pd.DataFrame:
    """
    Schedule table with validity flags; sub-threshold n are flagged, not raised
    """
    kind = schedule_kind(kind)
    limit = mp.log(mpf("0.1"))
    rows = []
    for log_n in log_n_values:
        row = {"log_n": mp.nstr(parse_log_n(log_n), SCHEDULE_DIGITS)}
        try:
            lg, lt, ll = evaluate_schedule(kind, params, log_n=log_n)
        except ValueError as exc:
            row.update(log_gamma="", log_tau="", log_lambda="", log_lambda_over_tau="",
                       valid=False, in_range=False, reason=str(exc))
            rows.append(row)
            continue
        with mp.workprec(SCHEDULE_PRECISION_BITS):
            row.update(
                log_gamma=mp.nstr(lg, SCHEDULE_DIGITS),
                log_tau=mp.nstr(lt, SCHEDULE_DIGITS),
                log_lambda=mp.nstr(ll, SCHEDULE_DIGITS),
                log_lambda_over_tau=mp.nstr(ll - lt, SCHEDULE_DIGITS),
                valid=True,
                in_range=bool(lg < limit and lt < limit and ll < limit),
                reason="",
            )
        rows.append(row)
    frame = pd.DataFrame(rows)
    logger.info(f"Exported {kind} schedule over {len(rows)} values, {int(frame['valid'].sum())} valid")
    return frame


def schedule_is_monotone(kind: str, params: Optional[Dict[str, Any]], log_n_values: Sequence[Union[float, str]]) -> bool:
    """
    gamma_n, tau_n, lambda_n strictly decrease along increasing log n
    """
    values = [evaluate_schedule(kind, params, log_n=v) for v in sorted(log_n_values, key=parse_log_n)]
    return all(all(b < a for a, b in zip(prev, cur)) for prev, cur in zip(values, values[1:]))


def schedule_identity_residuals(kind: str, params: Optional[Dict[str, Any]],
                                log_n: Union[float, str]) -> Dict[str, mpf]:
    """
    Absolute residuals of the identities defining each schedule, evaluated
    in log space at the same precision as the schedule itself
    """
    kind = schedule_kind(kind)
    params = params or {}
    d = int(params.get("d", 2))
    c0 = mpf(params.get("c0", 1.0))
    log_gamma, log_tau, log_lambda = evaluate_schedule(kind, params, log_n=log_n)
    with mp.workprec(SCHEDULE_PRECISION_BITS):
        ell = parse_log_n(log_n)
        L2 = mp.log(ell)
        L3 = mp.log(L2)
        if kind == "instant_loss":
            L4 = mp.log(L3)
            residuals = {
                "gamma_decay": log_gamma + ell * L4,
                "tau_decay": log_tau + L2 + L4,
                "lambda_decay": log_lambda + ell / d + ell / L3,
            }
        elif kind == "sharp_decay":
            lam = mpf(params.get("lam", 1.0))
            m = int(params.get("m", 1))
            residuals = {
                "gamma_is_lambda_power": log_gamma - m * log_lambda,
                "lambda_from_tau": log_lambda + 2 * c0 * lam / mp.exp(log_tau),
            }
        else:
            log_phi = _log_phi(params.get("phi", "identity"), c0 * L2, float(params.get("phi_exponent", 1.0)))
            residuals = {
                "gamma_over_lambda": log_gamma - log_lambda + L3,
                "tau_decay": log_tau + L3,
                "lambda_from_phi": log_lambda + 2 * ell + log_phi / d,
            }
        return {name: abs(value) for name, value in residuals.items()}


# ---------------------------------------------------------------- patchwork


@dataclass
class PatchworkSpec:
    centers: List[Tuple[float, ...]]
    lams: List[float]
    taus: List[float]
    gams: List[float]
    schedule: str = "user"
    frozen: List[bool] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.lams)
        if not (len(self.centers) == len(self.taus) == len(self.gams) == n) or n == 0:
            raise ValueError("centers, lams, taus and gams need one entry per cell")
        if not self.frozen:
            self.frozen = [False] * n
        for i in range(n):
            if not _cube_in_quarter_ball(self.centers[i], 3.0 * self.lams[i]):
                raise ValueError(f"cell {i} escapes B_1/4")
            for j in range(i):
                if _cubes_overlap(self.centers[i], 3.0 * self.lams[i], self.centers[j], 3.0 * self.lams[j]):
                    raise ValueError(f"cells {j} and {i} overlap")

    @property
    def n_cells(self) -> int:
        return len(self.lams)


def _cubes_overlap(c1, side1, c2, side2) -> bool:
    gap = np.abs(np.asarray(c1, dtype=float) - np.asarray(c2, dtype=float))
    return bool(np.all(gap < 0.5 * (side1 + side2) - 1e-12))


def place_cells(lams: Sequence[float], taus: Sequence[float], gams: Sequence[float], dim: int = 2,
                grid: Optional[TorusGrid] = None, frozen: Optional[Sequence[bool]] = None) -> PatchworkSpec:
    """
    Cubes of side 3 lam_n on a row through (1/2, ..., 1/2) with gaps of at
    least max lam, centres snapped to grid nodes when a grid is given
    """
    lams = [float(l) for l in lams]
    gap = max(lams)
    sides = [3.0 * l for l in lams]
    total = sum(sides) + gap * (len(lams) - 1)
    cursor = 0.5 - 0.5 * total
    centers = []
    for side in sides:
        x = cursor + 0.5 * side
        center = [x] + [0.5] * (dim - 1)
        if grid is not None:
            center = [round(c / grid.spacing) * grid.spacing for c in center]
        centers.append(tuple(center))
        cursor += side + gap
    return PatchworkSpec(centers, lams, list(taus), list(gams), frozen=list(frozen or []))


def assemble_patchwork(block: BuildingBlock, spec: PatchworkSpec, grid: TorusGrid, times: Sequence[float],
                       dt0: float = 1e-2, tol_flow: float = 1e-7, max_halvings: int = 8,
                       div_tol: float = 1e-8, mass_tol: float = 1e-4
                       ) -> Tuple[TimeDependentField, TransportSolution, List[RescaledCell]]:
    """
    b = sum of the active cells' v_n, u = transport of sum rho_n(0) by b
    """
    cells = Parallel(n_jobs=get_settings().threads, prefer="threads")(
        delayed(rescale_block)(block, lam, tau, gam, center, grid, False, div_tol)
        for lam, tau, gam, center in zip(spec.lams, spec.taus, spec.gams, spec.centers)
    )
    active = [c.v for c, frozen in zip(cells, spec.frozen) if not frozen]
    if active:
        b = TimeDependentField.superpose(active, name=f"patchwork-{spec.n_cells}")
    else:
        b = TimeDependentField.steady(VectorField.zeros(grid), min(c.v.horizon for c in cells),
                                      point_rule=lambda p: np.zeros_like(p), name="patchwork-frozen")
    u0 = ScalarField(grid, sum(c.rho.initial.values for c in cells))
    u = solve_transport(b, u0, times, dt0, tol_flow, max_halvings, mass_tol)
    logger.info(f"Assembled patchwork of {spec.n_cells} cells ({len(active)} active) on N={grid.points_per_axis}")
    return b, u, cells


def _support_points(f: ScalarField) -> np.ndarray:
    return f.grid.points()[np.abs(f.values.ravel()) > 0]


def check_separation(cells: Sequence[Tuple[ScalarField, float]]) -> None:
    """
    dist(supp f_i, supp f_j) >= lam_i + lam_j for every pair
    """
    supports = [_support_points(f) for f, _ in cells]
    for i in range(len(cells)):
        if len(supports[i]) == 0:
            continue
        tree = cKDTree(supports[i], boxsize=1.0)
        for j in range(i):
            if len(supports[j]) == 0:
                continue
            dist, _ = tree.query(supports[j], k=1)
            need = cells[i][1] + cells[j][1]
            if float(np.min(dist)) < need - 1e-12:
                raise ValueError(f"cells {j} and {i} are {float(np.min(dist)):.4g} apart, need {need:.4g}")


def _discrete_tail(grid: TorusGrid, radius: float, s: float, p: float) -> float:
    n = grid.points_per_axis
    j = np.arange(n)
    unwrapped = np.where(j == 0, n, j) * grid.spacing
    sq = np.meshgrid(*([unwrapped ** 2] * grid.dim), indexing="ij")
    length = np.sqrt(sum(sq))
    far = length >= radius
    return float(np.sum(grid.cell_volume * length[far] ** (-grid.dim - s * p)))


def disjoint_sum_lower_bound(cells: Sequence[Tuple[ScalarField, float]], s: float, p: float) -> Tuple[float, float]:
    """
    sum_n ([f_n]^p - c(d) 2^p / (sp) (2/lam_n)^{sp} ||f_n||_p^p), c(d) the
    unit-sphere area, together with the direct [sum f_n]^p. The correction
    never falls below the lattice tail it stands for.
    """
    if not 0 < s < 1 or p < 1:
        raise ValueError("need 0 < s < 1 and p >= 1")
    if not cells:
        raise ValueError("no cells given")
    check_separation(cells)
    grid = cells[0][0].grid
    c_d = SPHERE_AREA[grid.dim]
    lower = 0.0
    for f, lam in cells:
        mass = _lp(f.values, p) ** p
        continuum = c_d * 2.0 ** p / (s * p) * (2.0 / lam) ** (s * p) * mass
        lattice = 2.0 ** p * _discrete_tail(grid, 0.5 * lam, s, p) * mass
        lower += gagliardo_seminorm(f, s, p) ** p - max(continuum, lattice)
    total = ScalarField(grid, sum(f.values for f, _ in cells))
    direct = gagliardo_seminorm(total, s, p) ** p
    logger.debug(f"Disjoint-sum bound: lower={lower:.6e}, direct={direct:.6e}")
    return float(lower), float(direct)


def _cell_mask(grid: TorusGrid, center: Sequence[float], side: float) -> np.ndarray:
    xi = chart_coordinates(grid.points(), center, side)
    return np.all(np.abs(xi) < 0.5, axis=1).reshape(grid.shape)


def growth_report(u: TransportSolution, spec: PatchworkSpec, block: BuildingBlock, s: float = 0.5,
                  p: float = 2.0, window: Optional[float] = None) -> pd.DataFrame:
    """
    Per cell and time: measured [rho_n(t)]_{W^{s,p}}, the prediction
    [rho_n(0)] exp(c s t / tau_n), and the fitted against predicted rate.

    Active cells are fitted on t <= tau_n * window, the same stretch of block
    time for every cell; window defaults to the longest one all active cells
    reach.
    """
    grid = u.initial.grid
    times = np.asarray(u.times)
    active_taus = [tau for tau, frozen in zip(spec.taus, spec.frozen) if not frozen]
    if window is None and active_taus:
        window = min(times[-1] / tau for tau in active_taus)
    rows = []
    for n in range(spec.n_cells):
        mask = _cell_mask(grid, spec.centers[n], 3.0 * spec.lams[n])
        values = [gagliardo_seminorm(ScalarField(grid, np.where(mask, snap.values, 0.0)), s, p)
                  for snap in u.snapshots]
        predicted_rate = 0.0 if spec.frozen[n] else block.measured_c * s / spec.taus[n]
        fitted = np.ones(len(times), dtype=bool)
        if not spec.frozen[n] and window is not None:
            fitted = times <= spec.taus[n] * window + 1e-12
        if np.count_nonzero(fitted) < 3:
            raise ValueError(f"cell {n} has fewer than 3 times inside the fit window")
        x = times[fitted].reshape(-1, 1)
        y = np.log(np.maximum(np.asarray(values)[fitted], 1e-300))
        fit = LinearRegression().fit(x, y)
        rate = float(fit.coef_[0])
        r2 = _r2(y, fit.predict(x))
        for t, value in zip(times, values):
            rows.append({
                "cell": n, "lam": spec.lams[n], "tau": spec.taus[n], "gamma": spec.gams[n], "t": float(t),
                "seminorm": value, "predicted": values[0] * np.exp(predicted_rate * t),
                "rate_fit": rate, "rate_predicted": predicted_rate, "r2": r2,
            })
    return pd.DataFrame(rows)


def single_cell_growth(block: BuildingBlock, lam: float = 0.5, taus: Sequence[float] = (1.0, 0.5),
                       gam: float = 1.0, center: Sequence[float] = (0.5, 0.5), s: float = 0.5, p: float = 2.0,
                       dt0: float = 1e-2, tol_flow: float = 1e-7, max_halvings: int = 8,
                       mass_tol: float = 1e-4) -> pd.DataFrame:
    """
    One active cell per tau on the matched grid, transported from rho_n(0)
    over tau times the block's snapshot times. Reports the fitted rate of
    log [rho_n(t)]_{W^{s,p}} against measured_c s / tau.
    """
    if not taus:
        raise ValueError("need at least one tau")
    grid = matched_grid(block, lam)

    def one(tau: float) -> Dict[str, float]:
        cell = rescale_block(block, lam, tau, gam, center, grid, check_containment=False)
        times = np.asarray(cell.rho.times)
        # the step in block time is the same for every tau
        u = solve_transport(cell.v, cell.rho.initial, times[1:], dt0 * tau, tol_flow, max_halvings, mass_tol)
        values = np.array([gagliardo_seminorm(snap, s, p) for snap in u.snapshots])
        x = np.asarray(u.times).reshape(-1, 1)
        y = np.log(np.maximum(values, 1e-300))
        fit = LinearRegression().fit(x, y)
        return {
            "lam": lam, "tau": float(tau), "gamma": gam, "N": grid.points_per_axis,
            "seminorm_start": float(values[0]), "seminorm_end": float(values[-1]),
            "rate_fit": float(fit.coef_[0]), "rate_predicted": block.measured_c * s / tau,
            "r2": _r2(y, fit.predict(x)),
        }

    rows = Parallel(n_jobs=get_settings().threads, prefer="threads")(delayed(one)(tau) for tau in taus)
    table = pd.DataFrame(rows)
    logger.info(f"Single-cell growth at lam={lam:g} on N={grid.points_per_axis}: "
                f"rates {table['rate_fit'].round(4).tolist()} vs {table['rate_predicted'].round(4).tolist()}")
    return table
