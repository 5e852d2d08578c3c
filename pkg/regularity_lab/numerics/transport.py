# regularity_lab/numerics/transport.py
"""
Lagrangian transport u_t = u_0 o X_t^{-1}, its weak-form residual and the
regularity decay experiments (integrability exponent p_t at fixed alpha,
smoothness exponent alpha_t at fixed p).
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import integrate, optimize

from regularity_lab.app.core.config import get_settings
from regularity_lab.app.core.errors import NumericalFailure
from regularity_lab.numerics.field_io import write_field
from regularity_lab.numerics.flow_engine import RegularityProfile, _r2, integrate_flow
from regularity_lab.numerics.norms import _lp, gagliardo_seminorm, symmetric_competitor
from regularity_lab.numerics.torus_core import (
    ScalarField,
    TimeDependentField,
    divergence,
    exp_integrability,
    sample_field,
    spectral_gradient,
)

logger = logging.getLogger(__name__)

LADDER_STEPS = 32
BOUND_TABLE_COLUMNS = ["view", "t", "alpha_or_p_measured", "alpha_or_p_predicted",
                       "bound_value", "measured_value", "pass"]


@dataclass
class TransportSolution:
    initial: ScalarField
    times: List[float]
    snapshots: List[ScalarField]
    drift_ref: str
    method: str = "lagrangian"
    mass_defects: List[float] = field(default_factory=list)
    overshoots: List[float] = field(default_factory=list)
    meta: Dict[str, float] = field(default_factory=dict)

    def at(self, t: float) -> ScalarField:
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[k] - t) > 1e-12:
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[k]

    def save(self, directory: Union[str, Path]) -> List[Path]:
        directory = Path(directory)
        return [write_field(u, directory / f"u_t{t:.6f}.bin", name="u", time=t,
                            provenance={"drift": self.drift_ref, "method": self.method})
                for t, u in zip(self.times, self.snapshots)]


def _inverse_positions(b: TimeDependentField, times: Sequence[float], dt0: float, tol_flow: float,
                       max_halvings: int) -> Dict[float, np.ndarray]:
    grid = b.grid
    positive = sorted(t for t in times if t > 0)
    if not positive:
        return {}
    if b.autonomous:
        # X_s^{-1} is the flow of -b for every s, so one backward run covers all times
        flows = integrate_flow(b.reversed(positive[-1]), grid, positive[-1], dt0, tol_flow,
                               positive, max_halvings, "backward")
        return {fm.time: fm.positions for fm in flows}
    return {t: integrate_flow(b.reversed(t), grid, t, dt0, tol_flow, max_halvings=max_halvings,
                              direction="backward")[-1].positions for t in positive}


def solve_transport(b: TimeDependentField, u0: ScalarField, times: Sequence[float], dt0: float = 1e-2,
                    tol_flow: float = 1e-7, max_halvings: int = 8, mass_tol: float = 1e-6) -> TransportSolution:
    """
    u_k(x) = u_0(X_{t_k}^{-1}(x)) by cubic interpolation of u_0, clipped to
    the range of u_0. t = 0 is always part of the solution.

    For divergence-free drifts a drift of the mean beyond mass_tol raises
    NumericalFailure. overshoots holds, per time, how far the interpolant left
    [-||u_0||_inf, ||u_0||_inf] before clipping, relative to ||u_0||_inf.
    """
    if u0.grid != b.grid:
        raise ValueError("initial datum and drift live on different grids")
    times = sorted({0.0} | {float(t) for t in times})
    if times[0] < 0 or times[-1] > b.horizon + 1e-12:
        raise ValueError(f"times must lie in [0, {b.horizon}]")
    inverse = _inverse_positions(b, times, dt0, tol_flow, max_halvings)
    lo, hi = float(np.min(u0.values)), float(np.max(u0.values))
    snapshots, defects, overshoots = [], [], []
    mass0 = u0.mean()
    sup0 = max(u0.sup(), 1e-300)
    conservative = b.at(0.0).divergence_free
    for t in times:
        if t == 0.0:
            u = u0
            overshoots.append(0.0)
        else:
            raw = sample_field(u0, inverse[t], "cubic")
            overshoots.append(max(0.0, float(np.max(np.abs(raw))) / sup0 - 1.0))
            u = u0.with_values(np.clip(raw, lo, hi).reshape(u0.grid.shape))
        defect = abs(u.mean() - mass0)
        if conservative and defect > mass_tol:
            logger.error(f"Mass defect {defect:.3e} at t={t:g} exceeds mass_tol={mass_tol:.1e}")
            raise NumericalFailure("transported density lost its mean",
                                   {"t": t, "mass_defect": defect, "mass_tol": mass_tol, "drift": b.name})
        snapshots.append(u)
        defects.append(defect)
    logger.info(f"Transported '{b.name}' over {len(times)} times, max mass defect {max(defects):.3e}")
    return TransportSolution(u0, times, snapshots, b.name, mass_defects=defects, overshoots=overshoots,
                             meta={"mass_tol": mass_tol, "tol_flow": tol_flow})


def _test_modes(dim: int, max_mode: int) -> np.ndarray:
    axis = np.arange(-max_mode, max_mode + 1)
    grid = np.array(np.meshgrid(*([axis] * dim), indexing="ij")).reshape(dim, -1).T
    return np.array([k for k in grid if tuple(k) > tuple(-k)], dtype=int)


def weak_form_residual(sol: TransportSolution, b: TimeDependentField, test_modes: int = 5) -> float:
    """
    max over phi in {cos, sin}(2 pi k.x), 0 < |k|_inf <= test_modes, of
    |int u_T phi - int u_0 phi - int_0^T int u (b.grad phi + phi div b)|
    with trapezoidal quadrature in time
    """
    times = np.asarray(sol.times)
    if times[-1] <= 0:
        raise ValueError("solution has no positive times")
    if (len(times) - 1) / times[-1] < 8:
        raise ValueError("need at least 8 snapshots per unit time for the time quadrature")
    grid = sol.initial.grid
    coords = np.stack(grid.coordinates())
    fields = [b.at(t) for t in times]
    divs = [divergence(v).values for v in fields]
    worst = 0.0
    for k in _test_modes(grid.dim, test_modes):
        phase = 2.0 * np.pi * np.tensordot(k, coords, axes=1)
        for phi, dphi in ((np.cos(phase), -np.sin(phase)), (np.sin(phase), np.cos(phase))):
            grad_phi = [2.0 * np.pi * kj * dphi for kj in k]
            integrand = [
                np.mean(u.values * (sum(c * g for c, g in zip(v.components, grad_phi)) + phi * div))
                for u, v, div in zip(sol.snapshots, fields, divs)
            ]
            lhs = np.mean(sol.snapshots[-1].values * phi) - np.mean(sol.initial.values * phi)
            rhs = integrate.trapezoid(integrand, times)
            worst = max(worst, abs(lhs - rhs))
    logger.debug(f"Weak-form residual over modes <= {test_modes}: {worst:.3e}")
    return float(worst)


@dataclass
class DecayResult:
    p_profile: RegularityProfile
    alpha_profile: RegularityProfile
    bound_table: pd.DataFrame
    constants: Dict[str, float]


def _fit_rational(times: np.ndarray, curve: np.ndarray, top: float) -> Tuple[float, float]:
    """
    c in curve ~ top / (1 + c t), with R^2
    """
    model = lambda t, c: top / (1.0 + c * t)
    try:
        (c,), _ = optimize.curve_fit(model, times, curve, p0=[0.1], bounds=(0.0, np.inf))
    except RuntimeError as exc:
        raise NumericalFailure("rational decay law fit did not converge", {"times": times.tolist()}) from exc
    return float(c), _r2(curve, model(times, c))


def _largest_feasible(ladder: np.ndarray, measure, bound) -> Tuple[float, float, float]:
    """
    Largest ladder value e with measure(e) <= bound(e); falls back to the
    smallest rung
    """
    for e in ladder[::-1]:
        m, bd = measure(e), bound(e)
        if m <= bd * (1.0 + 1e-9):
            return float(e), bd, m
    e = ladder[0]
    return float(e), bound(e), measure(e)


def regularity_decay_experiment(b: TimeDependentField, u0: ScalarField, alpha: float, p: float, beta: float,
                                times: Sequence[float], sol: Optional[TransportSolution] = None,
                                dt0: float = 1e-2, tol_flow: float = 1e-7, max_halvings: int = 8,
                                mass_tol: float = 1e-6) -> DecayResult:
    """
    Two views of the same decay.

    p-view: at fixed alpha, largest p' on the ladder p j/32 with
    ||g*_t||_{p'} <= [u_0]_{F^alpha_p} (e^{Lt} C2 K)^{1/p'}.
    alpha-view: at fixed p, largest alpha' on the ladder alpha j/32 with
    [u_t]_{W^{alpha',p}} <= ||u_0||_inf^{1-theta} [u_0]_{W^{alpha,p}}^theta (e^{Lt} C2 K)^{1/p},
    theta = alpha'/alpha.
    C2 is the smallest value >= 2 keeping the top rung feasible at the
    first positive time; C1 comes from the fitted rational decay law.
    """
    if not 0 < alpha <= 1 or p < 1 or beta <= 0:
        raise ValueError("need 0 < alpha <= 1, p >= 1 and beta > 0")
    if sol is None:
        sol = solve_transport(b, u0, times, dt0, tol_flow, max_halvings, mass_tol)
    positive = [t for t in sol.times if t > 0]
    if not positive:
        raise ValueError("decay experiment needs at least one positive time")
    sample_times = sorted(set(positive) | {0.0})
    K = max(exp_integrability(b.at(t), beta) for t in sample_times)
    L = b.sup_divergence(sample_times)
    n_jobs = get_settings().threads

    comps = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(symmetric_competitor)(u, alpha) for u in [u0] + [sol.at(t) for t in positive]
    )
    g0, g_t = comps[0].values, [c.values for c in comps[1:]]
    falpha0 = _lp(g0, p)
    p_ladder = p * np.arange(1, LADDER_STEPS + 1) / LADDER_STEPS

    s_top = min(alpha, 1.0 - 1.0 / LADDER_STEPS)
    a_ladder = s_top * np.arange(1, LADDER_STEPS + 1) / LADDER_STEPS
    sup0 = u0.sup()
    gag0 = gagliardo_seminorm(u0, s_top, p)

    t1 = positive[0]
    growth = lambda t, C2: np.exp(L * t) * C2 * K
    first_ratio = _lp(g_t[0], p) / falpha0 if falpha0 > 0 else 0.0
    C2_p = max(2.0, first_ratio ** p / growth(t1, 1.0))
    gag_first = gagliardo_seminorm(sol.at(t1), s_top, p)
    C2_a = max(2.0, (gag_first / gag0) ** p / growth(t1, 1.0)) if gag0 > 0 else 2.0

    rows, p_curve, a_curve = [], [], []
    for t, g in zip(positive, g_t):
        e, bd, m = _largest_feasible(p_ladder, lambda q: _lp(g, q),
                                     lambda q: falpha0 * growth(t, C2_p) ** (1.0 / q))
        p_curve.append(e)
        rows.append(("p", t, e, bd, m))
        u_t = sol.at(t)
        e, bd, m = _largest_feasible(
            a_ladder, lambda s: gagliardo_seminorm(u_t, s, p),
            lambda s: sup0 ** (1.0 - s / s_top) * gag0 ** (s / s_top) * growth(t, C2_a) ** (1.0 / p))
        a_curve.append(e)
        rows.append(("alpha", t, e, bd, m))

    t_arr = np.asarray(positive)
    p_arr, a_arr = np.asarray(p_curve), np.asarray(a_curve)
    no_decay_p = bool(np.all(p_arr >= p_ladder[-1]))
    no_decay_a = bool(np.all(a_arr >= a_ladder[-1]))
    c_p, r2_p = (0.0, 1.0) if no_decay_p else _fit_rational(t_arr, p_arr, p_ladder[-1])
    c_a, r2_a = (0.0, 1.0) if no_decay_a else _fit_rational(t_arr, a_arr, a_ladder[-1])
    C1_p = c_p * beta / (alpha * p)
    C1_a = c_a * beta / (2.0 * alpha * p)
    constants = {"K": K, "L": L, "C2_p": C2_p, "C2_alpha": C2_a, "C1_p": C1_p, "C1_alpha": C1_a}
    logger.info(f"Decay fits: p-view c={c_p:.4f} (R2={r2_p:.3f}), alpha-view c={c_a:.4f} (R2={r2_a:.3f})")

    table = []
    for view, t, e, bd, m in rows:
        if view == "p":
            predicted = p / (1.0 + alpha * p * C1_p * t / beta)
        else:
            predicted = s_top / (1.0 + 2.0 * alpha * p * C1_a * t / beta)
        table.append({"view": view, "t": t, "alpha_or_p_measured": e, "alpha_or_p_predicted": predicted,
                      "bound_value": bd, "measured_value": m, "pass": bool(m <= bd * (1.0 + 1e-9))})
    bound_table = pd.DataFrame(table, columns=BOUND_TABLE_COLUMNS)

    p_profile = RegularityProfile(positive, p_curve, "constant" if no_decay_p else "rational",
                                  [p_ladder[-1], c_p], r2_p, {"no_decay": no_decay_p}, {"C1": C1_p, "C2": C2_p})
    a_profile = RegularityProfile(positive, a_curve, "constant" if no_decay_a else "rational",
                                  [a_ladder[-1], c_a], r2_a, {"no_decay": no_decay_a}, {"C1": C1_a, "C2": C2_a})
    return DecayResult(p_profile, a_profile, bound_table, constants)


def _gradient_norm(u: ScalarField) -> np.ndarray:
    return np.sqrt(np.sum(spectral_gradient(u).stacked() ** 2, axis=0))


def gradient_decay_profile(sol: TransportSolution, p: float, beta: float, K: float, L: float,
                           C1: float, C2: float) -> RegularityProfile:
    """
    Largest p' on the ladder with
    ||grad u_t||_{p'} <= ||grad u_0||_p (e^{Lt} C2 K)^{(1 + p C1 t / beta) / p}
    """
    if p < 1 or beta <= 0:
        raise ValueError("need p >= 1 and beta > 0")
    ladder = p * np.arange(1, LADDER_STEPS + 1) / LADDER_STEPS
    base = _lp(_gradient_norm(sol.initial), p)
    positive = [t for t in sol.times if t > 0]
    curve = []
    for t in positive:
        grad = _gradient_norm(sol.at(t))
        bound = base * (np.exp(L * t) * C2 * K) ** ((1.0 + p * C1 * t / beta) / p)
        e, _, _ = _largest_feasible(ladder, lambda q: _lp(grad, q), lambda q: bound)
        curve.append(e)
    arr = np.asarray(curve)
    if np.all(arr >= ladder[-1]):
        return RegularityProfile(positive, curve, "constant", [ladder[-1]], 1.0, {"no_decay": True})
    c, r2 = _fit_rational(np.asarray(positive), arr, ladder[-1])
    return RegularityProfile(positive, curve, "rational", [ladder[-1], c], r2, {"no_decay": False})


def admissible_horizon(alpha: float, p: float, p_prime: float, beta: float, C1: float) -> float:
    """
    Time below which u_t stays in W^{alpha',p'} for every alpha' < alpha
    """
    if not 0 < p_prime < p:
        raise ValueError(f"need 0 < p' < p, got p'={p_prime}, p={p}")
    if alpha <= 0 or beta <= 0 or C1 <= 0:
        raise ValueError("alpha, beta and C1 must be positive")
    return (1.0 / p_prime - 1.0 / p) * beta / (alpha * C1)
