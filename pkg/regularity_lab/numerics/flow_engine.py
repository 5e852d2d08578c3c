# regularity_lab/numerics/flow_engine.py
"""
Flows of log-Lipschitz drifts.

Particles are pushed with classical RK4 on unwrapped coordinates, the
step being halved until two successive runs agree at the final time.
The diagnostics built on top work on the seed lattice: discrete Jacobians,
stencil Lusin functions g_t, Sobolev exponent ladders, Holder slopes and
semigroup defects.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import optimize
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from regularity_lab.app.core.config import get_settings
from regularity_lab.app.core.errors import NumericalFailure
from regularity_lab.numerics.field_io import write_field
from regularity_lab.numerics.norms import NormKind, NormReport, _lp
from regularity_lab.numerics.torus_core import (
    ScalarField,
    TimeDependentField,
    TorusGrid,
    VectorField,
    sample_field,
    torus_distance,
)

logger = logging.getLogger(__name__)

DEFAULT_STENCIL_RADIUS = 4
DEFAULT_Q_LADDER = tuple(2.0 ** k for k in range(0, 11))
# neighbouring seeds may not move further apart than this
MAX_NEIGHBOUR_DISPLACEMENT = 0.25


@dataclass
class FlowMap:
    """
    X_t evaluated at a set of seeds. `unwrapped` keeps the continuous
    trajectory so that X_t(x) - x is a periodic displacement.
    """
    seeds: np.ndarray
    unwrapped: np.ndarray
    time: float
    direction: str = "forward"
    grid: Optional[TorusGrid] = None
    meta: Dict[str, float] = field(default_factory=dict)

    @property
    def positions(self) -> np.ndarray:
        wrapped = np.mod(self.unwrapped, 1.0)
        wrapped[wrapped >= 1.0] = 0.0
        return wrapped

    @property
    def dim(self) -> int:
        return self.seeds.shape[1]

    def displacement(self) -> np.ndarray:
        return self.unwrapped - self.seeds

    def _lattice(self) -> TorusGrid:
        if self.grid is None:
            raise ValueError("this diagnostic needs a flow computed on a seed lattice")
        return self.grid

    def displacement_field(self) -> VectorField:
        grid = self._lattice()
        disp = self.displacement()
        return VectorField(grid, tuple(disp[:, i].reshape(grid.shape) for i in range(grid.dim)))

    def evaluate(self, points: np.ndarray, scheme: str = "cubic") -> np.ndarray:
        """
        X_t at arbitrary (M, dim) points by interpolating the displacement
        """
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        disp = sample_field(self.displacement_field(), points, scheme)
        return points + np.asarray(disp).reshape(points.shape)

    def save(self, path: Union[str, Path]) -> Path:
        provenance = {"t": self.time, "direction": self.direction, **self.meta}
        return write_field(self.displacement_field(), path, name="flow_displacement",
                           time=self.time, provenance=provenance)


@dataclass
class RegularityProfile:
    times: List[float]
    exponent_curve: List[float]
    fit_model: str
    fit_params: List[float]
    r_squared: float
    flags: Dict[str, bool] = field(default_factory=dict)
    constants: Dict[str, float] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        params = ";".join(f"{p:.6g}" for p in self.fit_params)
        return pd.DataFrame({
            "time": self.times,
            "exponent": self.exponent_curve,
            "model": self.fit_model,
            "params": params,
            "r2": self.r_squared,
        })


def _r2(observed: np.ndarray, predicted: np.ndarray) -> float:
    observed = np.asarray(observed, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if np.allclose(observed, predicted, rtol=1e-12, atol=1e-12):
        return 1.0
    if len(observed) < 2 or np.allclose(observed, observed[0]):
        return 0.0
    return float(np.clip(r2_score(observed, predicted), 0.0, 1.0))


def _rk4_segment(b: TimeDependentField, x: np.ndarray, t0: float, t1: float, dt: float) -> np.ndarray:
    steps = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / steps
    for k in range(steps):
        t = t0 + k * h
        k1 = b.velocity(t, x)
        k2 = b.velocity(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = b.velocity(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = b.velocity(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def _integrate_slice(b: TimeDependentField, x0: np.ndarray, times: Sequence[float], dt: float) -> List[np.ndarray]:
    out = []
    x, t = x0.copy(), 0.0
    for t_next in times:
        x = _rk4_segment(b, x, t, t_next, dt)
        t = t_next
        out.append(x.copy())
    return out


def _seed_points(b: TimeDependentField, seeds) -> Tuple[np.ndarray, Optional[TorusGrid]]:
    if isinstance(seeds, TorusGrid):
        if seeds.dim != b.grid.dim:
            raise ValueError(f"seed lattice dimension {seeds.dim} does not match drift dimension {b.grid.dim}")
        return seeds.points(), seeds
    pts = np.asarray(seeds, dtype=float).reshape(-1, b.grid.dim)
    if len(pts) == 0:
        raise ValueError("no seeds given")
    return pts, None


def integrate_flow(b: TimeDependentField, seeds: Union[TorusGrid, np.ndarray], t_final: float, dt0: float,
                   tol_flow: float = 1e-7, snapshot_times: Optional[Sequence[float]] = None,
                   max_halvings: int = 8, direction: str = "forward") -> List[FlowMap]:
    """
    RK4 flow of b from time 0, one FlowMap per snapshot (t_final last).

    Every run is repeated with half the step until the sup torus distance
    between the last two runs at t_final drops below tol_flow.
    """
    if dt0 <= 0:
        raise ValueError(f"dt0 must be positive, got {dt0}")
    if t_final <= 0:
        raise ValueError(f"t_final must be positive, got {t_final}")
    if t_final > b.horizon + 1e-12:
        raise ValueError(f"t_final {t_final} exceeds the drift horizon {b.horizon}")
    if tol_flow <= 0:
        raise ValueError(f"tol_flow must be positive, got {tol_flow}")
    times = sorted({float(t) for t in (snapshot_times or [])} | {float(t_final)})
    if times[0] <= 0 or times[-1] > t_final:
        raise ValueError("snapshot times must lie in (0, t_final]")

    x0, grid = _seed_points(b, seeds)
    n_jobs = get_settings().threads
    slices = [idx for idx in np.array_split(np.arange(len(x0)), n_jobs) if len(idx)]

    def run(dt: float) -> List[np.ndarray]:
        parts = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_integrate_slice)(b, x0[idx], times, dt) for idx in slices
        )
        return [np.concatenate([part[k] for part in parts]) for k in range(len(times))]

    dt = min(dt0, t_final)
    previous = run(dt)
    defect = float("inf")
    for halving in range(1, max_halvings + 1):
        dt *= 0.5
        current = run(dt)
        defect = float(np.max(torus_distance(current[-1], previous[-1]), initial=0.0))
        logger.debug(f"{b.name}: halving {halving}, dt={dt:.3e}, defect={defect:.3e}")
        previous = current
        if defect < tol_flow:
            break
    else:
        raise NumericalFailure(
            f"flow of '{b.name}' did not reach tol_flow={tol_flow:.1e} after {max_halvings} halvings",
            {"defect": defect, "dt": dt, "halvings": max_halvings},
        )

    logger.info(f"Flow of '{b.name}' to t={t_final:g} accepted: dt={dt:.3e}, halvings={halving}, defect={defect:.3e}")
    meta = {"dt": dt, "scheme": "rk4", "halvings": halving, "defect": defect}
    return [FlowMap(x0, x, t, direction, grid, dict(meta)) for t, x in zip(times, previous)]


def inverse_flow(b: TimeDependentField, t: float, seeds: Union[TorusGrid, np.ndarray], dt0: float,
                 tol_flow: float = 1e-7, max_halvings: int = 8,
                 snapshot_times: Optional[Sequence[float]] = None) -> FlowMap:
    """
    X_t^{-1} by integrating s -> -b(t - s) over [0, t]. The composition
    defect sup dist(X_t(X_t^{-1}(x)), x) is stored in meta.
    """
    backward = integrate_flow(b.reversed(t), seeds, t, dt0, tol_flow, snapshot_times, max_halvings, "backward")
    inv = backward[-1]
    forward = integrate_flow(b, inv.positions, t, dt0, tol_flow, max_halvings=max_halvings)[-1]
    composition = float(np.max(torus_distance(forward.positions, inv.seeds), initial=0.0))
    inv.meta["composition_defect"] = composition
    logger.info(f"Inverse flow of '{b.name}' at t={t:g}: composition defect {composition:.3e}")
    return inv


def _lattice_displacement(fm: FlowMap) -> np.ndarray:
    grid = fm._lattice()
    disp = fm.displacement()
    return np.stack([disp[:, i].reshape(grid.shape) for i in range(grid.dim)])


def _check_resolved(disp: np.ndarray, grid: TorusGrid) -> None:
    worst = 0.0
    for axis in range(grid.dim):
        jump = np.abs(np.roll(disp, -1, axis=axis + 1) - disp)
        worst = max(worst, float(np.max(np.sqrt(np.sum(jump ** 2, axis=0)))) + grid.spacing)
    if worst >= MAX_NEIGHBOUR_DISPLACEMENT:
        raise NumericalFailure("flow unresolved on the seed lattice",
                               {"max_neighbour_displacement": worst, "N": grid.points_per_axis})


def flow_gradient(fm: FlowMap) -> np.ndarray:
    """
    DX_t[i, j] by central differences of the periodic displacement
    """
    grid = fm._lattice()
    disp = _lattice_displacement(fm)
    _check_resolved(disp, grid)
    h = grid.spacing
    out = np.empty((grid.dim, grid.dim) + grid.shape)
    for i in range(grid.dim):
        for j in range(grid.dim):
            out[i, j] = (np.roll(disp[i], -1, axis=j) - np.roll(disp[i], 1, axis=j)) / (2.0 * h)
            if i == j:
                out[i, j] += 1.0
    return out


def jacobian_compressibility(fm: FlowMap, L: float, tol_J: float = 1e-2) -> Tuple[float, float, bool]:
    jac = flow_gradient(fm)
    if fm.dim == 1:
        det = jac[0, 0]
    else:
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    lo, hi = float(np.min(det)), float(np.max(det))
    t = fm.time
    ok = lo >= np.exp(-t * L) - tol_J and hi <= np.exp(t * L) + tol_J
    logger.debug(f"Jacobian determinant at t={t:g} in [{lo:.5f}, {hi:.5f}], L={L:.4f}, pass={ok}")
    return lo, hi, bool(ok)


def _stencil(dim: int, radius: int) -> np.ndarray:
    axis = np.arange(-radius, radius + 1)
    offsets = np.stack([c.ravel() for c in np.meshgrid(*([axis] * dim), indexing="ij")], axis=-1)
    norms = np.sum(offsets ** 2, axis=1)
    return offsets[(norms > 0) & (norms <= radius * radius)]


def _stencil_ratios(fm: FlowMap, radius: int):
    """
    Yields (offset, ratio) with ratio[x] = dist(X(x), X(x + o h)) / dist(x, x + o h)
    """
    grid = fm._lattice()
    disp = _lattice_displacement(fm)
    _check_resolved(disp, grid)
    h = grid.spacing
    axes = tuple(range(1, grid.dim + 1))
    for off in _stencil(grid.dim, radius):
        step = off * h
        moved = np.roll(disp, tuple(-int(o) for o in off), axis=axes) - disp
        moved = moved + step.reshape((-1,) + (1,) * grid.dim)
        moved = moved - np.round(moved)
        after = np.sqrt(np.sum(moved ** 2, axis=0))
        yield off, after / torus_distance(step, np.zeros_like(step))


def lusin_lipschitz_profile(fm: FlowMap, q_list: Sequence[float],
                            radius: int = DEFAULT_STENCIL_RADIUS) -> Tuple[ScalarField, List[NormReport]]:
    """
    Stencil Lusin function g(x) = max over neighbours y within radius*h of
    dist(X_t(x), X_t(y)) / dist(x, y), with its L^q norms
    """
    grid = fm._lattice()
    g = np.zeros(grid.shape)
    for _, ratio in _stencil_ratios(fm, radius):
        np.maximum(g, ratio, out=g)
    g_field = ScalarField(grid, g)
    reports = [NormReport(kind=NormKind.LP, p=float(q), value=_lp(g, q), N=grid.points_per_axis)
               for q in q_list]
    return g_field, reports


def lusin_bad_set(g: ScalarField, lam: float, q: float) -> Tuple[float, float]:
    """
    Measure of {g >= lam} next to its Chebyshev bound ||g||_q^q / lam^q
    """
    if lam <= 0 or q <= 0:
        raise ValueError("lam and q must be positive")
    measure = float(np.mean(g.values >= lam))
    return measure, float(_lp(g.values, q) ** q / lam ** q)


def lusin_restriction_check(fm: FlowMap, g: ScalarField, lam: float,
                            radius: int = DEFAULT_STENCIL_RADIUS) -> Tuple[bool, float]:
    """
    On {g < lam} every stencil pair is lam-Lipschitz; returns (holds, worst excess)
    """
    inside = g.values < lam
    worst = -np.inf
    for _, ratio in _stencil_ratios(fm, radius):
        if np.any(inside):
            worst = max(worst, float(np.max(ratio[inside] - lam)))
    return bool(worst <= 1e-12), float(worst)


def sobolev_exponent_horizon(beta: float, C1: float, q: float) -> float:
    """
    Largest t with beta / (C1 t) >= q
    """
    if beta <= 0 or C1 <= 0 or q <= 0:
        raise ValueError("beta, C1 and q must be positive")
    return beta / (C1 * q)


def _growth_bound(t: float, C: float, beta: float, K: float, L: float, C_prime: float) -> float:
    return float(np.exp(t * t * L * C / beta + (t * C / beta) * np.log(C_prime * K)))


def _fit_flow_constant(g0: np.ndarray, t0: float, beta: float, K: float, L: float, C_prime: float,
                       floor: float = 1e-8) -> float:
    """
    Smallest C with ||g_t0||_{beta/(C t0)} <= bound(t0, C)
    """
    def excess(C: float) -> float:
        q = beta / (C * t0)
        return float(np.log(_lp(g0, q)) - np.log(_growth_bound(t0, C, beta, K, L, C_prime)))

    if excess(floor) <= 1e-9:
        return floor
    hi = 1.0
    while excess(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise NumericalFailure("could not bracket the flow constant", {"t0": t0})
    lo = floor if hi == 1.0 else hi / 2.0
    return float(optimize.brentq(excess, lo, hi, xtol=1e-12, rtol=1e-10))


def sobolev_decay_profile(flows: Sequence[FlowMap], beta: float, K: float, L: float,
                          q_ladder: Sequence[float] = DEFAULT_Q_LADDER, C_prime: float = 2.0,
                          radius: int = DEFAULT_STENCIL_RADIUS) -> RegularityProfile:
    """
    Largest ladder q with ||g_t||_q <= e^{t^2 L C/beta} (C' K)^{t C/beta}
    at every snapshot, C fitted once on the earliest one, then the curve is
    fitted to A/t. A curve that never drops below its first value is the
    Lipschitz regime and gets the constant model.
    """
    if beta <= 0 or K <= 0:
        raise ValueError("beta and K must be positive")
    flows = sorted(flows, key=lambda fm: fm.time)
    ladder = np.sort(np.asarray(q_ladder, dtype=float))
    g_values = [lusin_lipschitz_profile(fm, [], radius)[0].values for fm in flows]
    times = [fm.time for fm in flows]

    C = _fit_flow_constant(g_values[0], times[0], beta, K, L, C_prime)
    exponents = []
    for t, g in zip(times, g_values):
        bound = _growth_bound(t, C, beta, K, L, C_prime) * (1.0 + 1e-9)
        admissible = [q for q in ladder if _lp(g, q) <= bound]
        if not admissible:
            logger.warning(f"Lusin bound violated at every ladder exponent at t={t:g}")
            admissible = [ladder[0]]
        exponents.append(float(max(admissible)))

    q = np.asarray(exponents)
    constants = {"C": C, "C_prime": C_prime, "beta_over_C": beta / C}
    lipschitz = bool(np.all(q >= q[0]))
    if lipschitz:
        logger.info(f"Sobolev exponent never decays (q={q[0]:g} at t={times[0]:g}): Lipschitz regime")
        return RegularityProfile(times, exponents, "constant", [float(np.mean(q))],
                                 _r2(q, np.full_like(q, np.mean(q))), {"lipschitz": True}, constants)

    inv_t = 1.0 / np.asarray(times).reshape(-1, 1)
    model = LinearRegression(fit_intercept=False).fit(inv_t, q)
    A = float(model.coef_[0])
    r2 = _r2(q, model.predict(inv_t))
    logger.info(f"Sobolev exponent decay fitted: A={A:.4f}, beta/C={beta / C:.4f}, R2={r2:.3f}")
    return RegularityProfile(times, exponents, "hyperbolic", [A], r2, {"lipschitz": False}, constants)


def _holder_pairs(fm: FlowMap, anchor: Optional[int], pairs: int, rng) -> Tuple[np.ndarray, np.ndarray]:
    """
    Initial and final distances over the sampled pairs
    """
    if anchor is not None:
        others = np.delete(np.arange(len(fm.seeds)), anchor)
        before = torus_distance(fm.seeds[others], fm.seeds[anchor])
        after = torus_distance(fm.positions[others], fm.positions[anchor])
        return np.atleast_1d(before), np.atleast_1d(after)
    if fm.grid is None:
        i = rng.integers(0, len(fm.seeds), size=pairs)
        j = rng.integers(0, len(fm.seeds), size=pairs)
        keep = i != j
        return (torus_distance(fm.seeds[i[keep]], fm.seeds[j[keep]]),
                torus_distance(fm.positions[i[keep]], fm.positions[j[keep]]))
    grid = fm.grid
    n = grid.points_per_axis
    top = max(1, int(np.log2(max(1, n // 16))))
    base = rng.integers(0, grid.size, size=pairs)
    scale = 2 ** rng.integers(0, top + 1, size=pairs)
    direction = rng.integers(-1, 2, size=(pairs, grid.dim))
    direction[np.all(direction == 0, axis=1), 0] = 1
    idx = np.array(np.unravel_index(base, grid.shape)).T
    other = np.ravel_multi_index(tuple(((idx + scale[:, None] * direction) % n).T), grid.shape)
    return (torus_distance(fm.seeds[base], fm.seeds[other]),
            torus_distance(fm.positions[base], fm.positions[other]))


def holder_profile(flows: Sequence[FlowMap], beta: float, anchor: Optional[int] = None,
                   pairs: int = 4000, seed: int = 0) -> RegularityProfile:
    """
    Holder exponent at each snapshot as the least-squares slope of
    log dist(X_t x, X_t y) against log dist(x, y), fitted to exp(-c t / beta).
    Slopes above 1 are reported as 1.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    flows = sorted(flows, key=lambda fm: fm.time)
    rng = np.random.default_rng(seed)
    times, exponents = [], []
    for fm in flows:
        before, after = _holder_pairs(fm, anchor, pairs, rng)
        keep = (before > 0) & (after > 0)
        if np.count_nonzero(keep) < 2:
            raise ValueError(f"not enough separated pairs to fit a Holder slope at t={fm.time:g}")
        x = np.log(before[keep]).reshape(-1, 1)
        slope = float(LinearRegression().fit(x, np.log(after[keep])).coef_[0])
        times.append(fm.time)
        exponents.append(float(np.clip(slope, 1e-12, 1.0)))

    t = np.asarray(times)
    e = np.asarray(exponents)
    model = lambda tt, c: np.exp(-c * tt / beta)
    try:
        (c,), _ = optimize.curve_fit(model, t, e, p0=[0.0])
    except RuntimeError as exc:
        raise NumericalFailure("Holder decay law fit did not converge", {"exponents": e.tolist()}) from exc
    r2 = _r2(e, model(t, c))
    logger.info(f"Holder exponents {np.round(e, 4).tolist()} fitted with c={c:.4f} (R2={r2:.3f})")
    return RegularityProfile(times, exponents, "exponential", [float(c)], r2, constants={"c": float(c)})


def semigroup_check(b: TimeDependentField, t: float, s: float, seeds: TorusGrid, dt0: float,
                    tol_flow: float = 1e-7, max_halvings: int = 8, scheme: str = "cubic") -> float:
    """
    sup over seeds of dist(X_{t+s}(x), X_t(X_s(x))), X_t evaluated off the
    lattice by interpolating its displacement
    """
    if not b.autonomous:
        raise ValueError("semigroup check needs a time-independent drift")
    if t <= 0 or s <= 0:
        raise ValueError("t and s must be positive")
    flows = integrate_flow(b, seeds, t + s, dt0, tol_flow, [s, t], max_halvings)
    by_time = {fm.time: fm for fm in flows}
    composed = by_time[float(t)].evaluate(by_time[float(s)].unwrapped, scheme)
    defect = float(np.max(torus_distance(composed, by_time[float(t + s)].unwrapped), initial=0.0))
    logger.info(f"Semigroup defect for t={t:g}, s={s:g}: {defect:.3e}")
    return defect


def semigroup_power_check(b: TimeDependentField, delta: float, n: int, p: float, seeds: TorusGrid,
                          dt0: float, tol_flow: float = 1e-7, max_halvings: int = 8) -> Dict[str, float]:
    """
    ||DX_{n delta}||_{L^{p/n}} against e^{L delta n^2} ||DX_delta||_{L^p}^n,
    with Frobenius norms of the lattice flow gradient
    """
    if n < 1 or delta <= 0 or p <= 0:
        raise ValueError("need n >= 1, delta > 0 and p > 0")
    flows = integrate_flow(b, seeds, n * delta, dt0, tol_flow, [delta], max_halvings)
    first, last = flows[0], flows[-1]
    L = b.sup_divergence([0.0, n * delta])
    frob = lambda fm: np.sqrt(np.sum(flow_gradient(fm) ** 2, axis=(0, 1)))
    lhs = _lp(frob(last), p / n)
    rhs = float(np.exp(L * delta * n * n) * _lp(frob(first), p) ** n)
    return {"lhs": lhs, "rhs": rhs, "L": L, "holds": float(lhs <= rhs * (1.0 + 1e-9))}
