# regularity_lab/numerics/norms.py
"""
Discrete estimators: Lp norms, Gagliardo seminorms, the Hajlasz-type class
F^alpha_p (certified bracket), maximal function, BMO, log-Lipschitz modulus
and the exponential Lusin inequality.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy import optimize, sparse

from regularity_lab.app.core.errors import NumericalFailure
from regularity_lab.numerics.torus_core import (
    EXP_OVERFLOW,
    ScalarField,
    TorusGrid,
    VectorField,
    _fftn,
    _ifftn,
    spectral_gradient,
    torus_distance,
)

logger = logging.getLogger(__name__)

# the constrained lower-bound problem has O(n^2) constraints
MAX_LOWER_SUBSAMPLE = 512


class NormKind(str, Enum):
    LP = "Lp"
    GAGLIARDO = "GagliardoWsp"
    FALPHA_UPPER = "FAlphaP_upper"
    FALPHA_LOWER = "FAlphaP_lower"
    BMO = "BMO"
    EXP_INTEGRABILITY = "ExpIntegrability"
    LOG_LIP = "LogLipModulus"


class NormReport(BaseModel):
    """
    One measured functional with its discretization metadata
    """
    kind: NormKind
    s: Optional[float] = None
    p: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    value: float = Field(ge=0)
    N: int
    quadrature: str = "midpoint"
    subsample: Optional[int] = None
    seed: Optional[int] = None
    converged: bool = True
    residual: Optional[float] = None

    CSV_COLUMNS: ClassVar[List[str]] = ["kind", "s", "p", "alpha", "beta", "value", "N", "subsample", "seed"]

    def to_row(self) -> Dict[str, object]:
        data = self.model_dump()
        data["kind"] = self.kind.value
        return {col: data[col] for col in self.CSV_COLUMNS}


@dataclass
class HajlaszWitness:
    g: ScalarField
    alpha: float
    checked_pairs: int
    max_violation: float


@dataclass
class HajlaszBracket:
    upper: NormReport
    lower: NormReport
    witness: HajlaszWitness


def _lp(values: np.ndarray, p: float) -> float:
    a = np.abs(values)
    if np.isinf(p):
        return float(np.max(a))
    peak = np.max(a)
    if peak == 0:
        return 0.0
    return float(peak * np.mean((a / peak) ** p) ** (1.0 / p))


def lp_norm(f: ScalarField, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1 (quasi-norms are not supported), got {p}")
    return _lp(f.values, p)


def _shift_vectors(grid: TorusGrid) -> np.ndarray:
    """
    Every lattice shift j in {0..N-1}^dim, row-major
    """
    n = grid.points_per_axis
    axes = [np.arange(n)] * grid.dim
    return np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=-1)


def _shift_distances(grid: TorusGrid) -> np.ndarray:
    """
    Torus length of every lattice shift, shaped like the grid
    """
    n = grid.points_per_axis
    j = np.arange(n)
    wrapped = np.minimum(j, n - j) * grid.spacing
    sq = np.meshgrid(*([wrapped ** 2] * grid.dim), indexing="ij")
    return np.sqrt(sum(sq))


def _squared_shift_norms(grid: TorusGrid) -> np.ndarray:
    """
    Squared integer length of every wrapped lattice shift
    """
    n = grid.points_per_axis
    j = np.arange(n)
    wrapped = np.minimum(j, n - j)
    sq = np.meshgrid(*([wrapped ** 2] * grid.dim), indexing="ij")
    return sum(sq).astype(np.int64)


def _difference_moments(values: np.ndarray, p: float) -> np.ndarray:
    """
    S[j] = mean_x |f(x + j h) - f(x)|^p for every lattice shift j
    """
    if p == 2:
        power = np.abs(_fftn(values)) ** 2
        autocorr = _ifftn(power) / values.size
        return np.maximum(2.0 * np.mean(values ** 2) - 2.0 * autocorr, 0.0)
    out = np.empty(values.shape)
    axes = tuple(range(values.ndim))
    for j in np.ndindex(values.shape):
        shifted = np.roll(values, tuple(-k for k in j), axis=axes)
        out[j] = np.mean(np.abs(shifted - values) ** p)
    return out


def gagliardo_seminorm(f: ScalarField, s: float, p: float) -> float:
    """
    [f]_{W^{s,p}}: double sum over nodes x and offsets h in (0,1]^dim with
    weight |h|^{-dim-sp}, h measured unwrapped
    """
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    grid = f.grid
    n = grid.points_per_axis
    moments = _difference_moments(f.values, p)
    # shift index 0 stands for the offset h = 1 on that axis
    j = np.arange(n)
    unwrapped = np.where(j == 0, n, j) * grid.spacing
    sq = np.meshgrid(*([unwrapped ** 2] * grid.dim), indexing="ij")
    length = np.sqrt(sum(sq))
    weight = grid.cell_volume * length ** (-grid.dim - s * p)
    total = float(np.sum(moments * weight))
    return total ** (1.0 / p)


def symmetric_competitor(f: ScalarField, alpha: float) -> ScalarField:
    """
    g*(x) = 1/2 max_{y != x} |f(x) - f(y)| / dist(x, y)^alpha
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    values = f.values
    dist = _shift_distances(f.grid)
    axes = tuple(range(values.ndim))
    best = np.zeros(values.shape)
    for j in np.ndindex(values.shape):
        if not any(j):
            continue
        shifted = np.roll(values, tuple(-k for k in j), axis=axes)
        np.maximum(best, np.abs(shifted - values) / dist[j] ** alpha, out=best)
    return f.with_values(0.5 * best)


def _check_witness(f: ScalarField, g: ScalarField, alpha: float, pairs: int, rng) -> Tuple[int, float]:
    pts = f.grid.points()
    vals = f.values.ravel()
    gv = g.values.ravel()
    i = rng.integers(0, len(vals), size=pairs)
    j = rng.integers(0, len(vals), size=pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    lhs = np.abs(vals[i] - vals[j])
    rhs = torus_distance(pts[i], pts[j]) ** alpha * (gv[i] + gv[j])
    violation = float(np.max(lhs - rhs * (1.0 + 1e-12), initial=-np.inf))
    return int(keep.sum()), violation


def _pair_ratios(f: ScalarField, alpha: float, subset: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    pts = f.grid.points()[subset]
    vals = f.values.ravel()[subset]
    i, j = np.triu_indices(len(subset), k=1)
    dist = torus_distance(pts[i], pts[j])
    ratio = np.abs(vals[i] - vals[j]) / dist ** alpha
    keep = ratio > 0
    return i[keep], j[keep], ratio[keep]


def _lower_linear(i, j, ratio, n: int, total: int) -> Tuple[float, bool, float]:
    rows = np.arange(len(ratio))
    a_ub = sparse.csr_matrix((-np.ones(2 * len(ratio)), (np.concatenate([rows, rows]), np.concatenate([i, j]))),
                             shape=(len(ratio), n))
    res = optimize.linprog(np.full(n, 1.0 / total), A_ub=a_ub, b_ub=-ratio, bounds=(0, None), method="highs")
    if res.status != 0:
        return 0.0, False, float("inf")
    return float(res.fun), True, 0.0


def _lower_dual(i, j, ratio, n: int, total: int, p: float) -> Tuple[float, bool, float]:
    """
    Weak duality: any nonnegative multiplier vector certifies a lower bound
    on min (1/total) sum g^p subject to g_i + g_j >= r_ij.
    """
    scale = float(np.max(ratio))
    r = ratio / scale
    expo = 1.0 / (p - 1.0)

    def primal(nu):
        lam = np.bincount(i, weights=nu, minlength=n) + np.bincount(j, weights=nu, minlength=n)
        return lam, (lam / p) ** expo

    def objective(nu):
        lam, g = primal(nu)
        dual = float(np.dot(nu, r) - (1.0 - 1.0 / p) * np.dot(lam, g))
        grad = r - g[i] - g[j]
        return -dual, -grad

    nu0 = np.full(len(r), 1.0 / max(n, 1))
    res = optimize.minimize(objective, nu0, jac=True, method="L-BFGS-B",
                            bounds=[(0.0, None)] * len(r), options={"maxiter": 5000})
    dual_value = max(-float(res.fun), 0.0)
    _, g = primal(res.x)
    # repair the recovered primal point into a feasible one to measure the gap
    shortfall = np.maximum(r - g[i] - g[j], 0.0)
    repaired = g.copy()
    np.maximum.at(repaired, i, g[i] + shortfall)
    primal_value = float(np.sum(repaired ** p))
    gap = (primal_value - dual_value) / max(primal_value, 1e-300)
    lower = scale * (dual_value / total) ** (1.0 / p)
    return lower, gap < 1e-3, gap


def hajlasz_bracket(f: ScalarField, alpha: float, p: float, subsample: Optional[int] = None,
                    seed: int = 0, check_pairs: int = 4096, competitor: Optional[ScalarField] = None) -> HajlaszBracket:
    """
    Certified bracket lower <= [f]_{F^alpha_p} <= upper.

    upper is the Lp norm of the symmetric competitor (feasible by
    construction); lower solves the problem restricted to the constraints
    among a random subsample of nodes, with g = 0 off the subsample.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    grid = f.grid
    total = grid.size
    if subsample is None:
        subsample = min(MAX_LOWER_SUBSAMPLE, total)
    elif subsample > total:
        raise ValueError(f"subsample {subsample} exceeds the {total} grid points")
    rng = np.random.default_rng(seed)
    g = competitor if competitor is not None else symmetric_competitor(f, alpha)
    upper_value = _lp(g.values, p)
    checked, violation = _check_witness(f, g, alpha, check_pairs, rng)
    if violation > 1e-12 * max(1.0, f.sup()):
        raise NumericalFailure("symmetric competitor failed its feasibility check", {"violation": violation})

    n = min(subsample, MAX_LOWER_SUBSAMPLE, total)
    subset = np.arange(total) if n == total else np.sort(rng.choice(total, size=n, replace=False))
    i, j, ratio = _pair_ratios(f, alpha, subset)
    converged, residual = True, 0.0
    if len(ratio) == 0:
        lower_value = 0.0
    elif np.isinf(p):
        lower_value = 0.5 * float(np.max(ratio))
    elif p == 1:
        lower_value, converged, residual = _lower_linear(i, j, ratio, n, total)
    else:
        lower_value, converged, residual = _lower_dual(i, j, ratio, n, total, p)
    if not converged:
        logger.warning(f"F^{alpha}_{p} lower-bound solver stopped early, relative gap {residual:.3e}")
    if lower_value > upper_value * (1.0 + 1e-6) + 1e-12:
        raise NumericalFailure("F-class bracket inverted", {"lower": lower_value, "upper": upper_value})
    lower_value = min(lower_value, upper_value)

    meta = dict(p=p, alpha=alpha, N=grid.points_per_axis, seed=seed)
    upper = NormReport(kind=NormKind.FALPHA_UPPER, value=upper_value, subsample=total, **meta)
    lower = NormReport(kind=NormKind.FALPHA_LOWER, value=lower_value, subsample=n,
                       converged=converged, residual=residual, **meta)
    return HajlaszBracket(upper, lower, HajlaszWitness(g, alpha, checked, violation))


def falpha_norm(f: ScalarField, alpha: float, p: float) -> float:
    """
    ||f||_{F^alpha_p} = ||f||_p + [f]_{F^alpha_p}, using the upper certificate
    """
    return lp_norm(f, p) + _lp(symmetric_competitor(f, alpha).values, p)


def _ball_radii(grid: TorusGrid) -> int:
    """
    Number of radii k h needed before the ball covers the torus
    """
    half = grid.points_per_axis // 2
    k = 1
    while k * k <= grid.dim * half * half:
        k += 1
    return k


def maximal_function(f: ScalarField) -> ScalarField:
    """
    Discrete Hardy-Littlewood maximal function over open balls of radius
    k h, k = 1..K, the last ball being the whole torus. Radius h is the node
    itself.
    """
    a = np.abs(f.values)
    sq = _squared_shift_norms(f.grid)
    a_hat = _fftn(a)
    best = a.copy()
    for k in range(2, _ball_radii(f.grid) + 1):
        kernel = (sq < k * k).astype(float)
        avg = _ifftn(a_hat * np.conj(_fftn(kernel))) / kernel.sum()
        np.maximum(best, avg, out=best)
    return f.with_values(best)


def maximal_l2_constant(fields: Sequence[ScalarField]) -> float:
    """
    Single constant with ||Mf||_2 <= C ||f||_2 over a corpus
    """
    ratios = [lp_norm(maximal_function(f), 2) / lp_norm(f, 2) for f in fields if lp_norm(f, 2) > 0]
    return max(ratios) if ratios else 0.0


def bmo_seminorm(f: ScalarField) -> float:
    """
    sup over closed grid balls (every centre, dyadic radii) of the mean
    oscillation
    """
    values = f.values
    grid = f.grid
    n = grid.points_per_axis
    half = n // 2
    axes = tuple(range(values.ndim))
    wrapped = np.arange(-half, half)
    lattice = np.stack([c.ravel() for c in np.meshgrid(*([wrapped] * grid.dim), indexing="ij")], axis=-1)
    norms = np.sum(lattice ** 2, axis=1)
    sq = _squared_shift_norms(grid)
    values_hat = _fftn(values)
    best = 0.0
    k = 1
    while True:
        offsets = lattice[norms <= k * k]
        kernel = (sq <= k * k).astype(float)
        mean = _ifftn(values_hat * np.conj(_fftn(kernel))) / len(offsets)
        osc = np.zeros(values.shape)
        for off in offsets:
            osc += np.abs(np.roll(values, tuple(-o for o in off), axis=axes) - mean)
        osc /= len(offsets)
        best = max(best, float(np.max(osc)))
        if k * k > grid.dim * half * half:
            break
        k *= 2
    return best


def _sample_pairs(grid: TorusGrid, pairs: int, rng) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pairs drawn as continuous positions and snapped to the grid, so the same
    seed probes the same locations at every resolution
    """
    n = grid.points_per_axis
    u = np.floor(rng.random((pairs, grid.dim)) * n).astype(int) % n
    v = np.floor(rng.random((pairs, grid.dim)) * n).astype(int) % n
    flat = lambda idx: np.ravel_multi_index(tuple(idx.T), grid.shape)
    return flat(u), flat(v)


def verify_exponential_lusin(f: ScalarField, beta_prime: float, pairs: int = 10000,
                             seed: int = 0) -> Tuple[float, float]:
    """
    Smallest C with beta'/C |f(x)-f(y)|/dist <= 1 + log M(exp(beta'|grad f|))(x),
    fitted on half the pairs; the violation is measured on the other half
    """
    if beta_prime <= 0:
        raise ValueError(f"beta_prime must be positive, got {beta_prime}")
    grad = np.sqrt(np.sum(spectral_gradient(f).stacked() ** 2, axis=0))
    if beta_prime * np.max(grad) > EXP_OVERFLOW:
        raise NumericalFailure("beta too large for this field", {"max_gradient": float(np.max(grad))})
    level = 1.0 + np.log(maximal_function(f.with_values(np.exp(beta_prime * grad))).values.ravel())
    rng = np.random.default_rng(seed)
    x, y = _sample_pairs(f.grid, pairs, rng)
    keep = x != y
    x, y = x[keep], y[keep]
    pts = f.grid.points()
    vals = f.values.ravel()
    ratio = np.abs(vals[x] - vals[y]) / torus_distance(pts[x], pts[y])
    required = beta_prime * ratio / level[x]
    half = len(required) // 2
    fitted = float(np.max(required[:half], initial=0.0))
    if fitted == 0.0:
        return 0.0, float(-np.min(level[x[half:]], initial=1.0))
    violation = float(np.max(beta_prime * ratio[half:] / fitted - level[x[half:]], initial=-np.inf))
    logger.debug(f"Exponential Lusin fit C1={fitted:.4f}, holdout violation={violation:.3e}")
    return fitted, violation


def log_lipschitz_modulus(b: VectorField, beta: float, K: float, pairs: int = 10000, seed: int = 0) -> float:
    """
    Smallest C with |b(x)-b(y)| <= (C/beta) d log(C K / d^dim) on sampled pairs
    """
    if beta <= 0 or K <= 0:
        raise ValueError("beta and K must be positive")
    grid = b.grid
    rng = np.random.default_rng(seed)
    x, y = _sample_pairs(grid, pairs, rng)
    pts = grid.points()
    dist = torus_distance(pts[x], pts[y])
    keep = dist > 0
    if not np.any(keep):
        raise ValueError("all sampled pairs coincide")
    x, y, dist = x[keep], y[keep], dist[keep]
    stacked = b.stacked().reshape(grid.dim, -1)
    jump = np.sqrt(np.sum((stacked[:, x] - stacked[:, y]) ** 2, axis=0))
    if np.max(jump) == 0:
        return 0.0
    vol = dist ** grid.dim

    def excess(c: float) -> float:
        return float(np.max(jump - (c / beta) * dist * np.log(c * K / vol)))

    # beyond c0 every log is nonnegative and the right-hand side increases with c
    c0 = float(np.max(vol / K))
    if excess(c0) <= 0:
        return c0
    hi = 2.0 * c0
    while excess(hi) > 0:
        hi *= 2.0
    root = optimize.bisect(excess, c0, hi, xtol=1e-12 * hi, maxiter=200)
    return float(root * (1.0 + 1e-9))


def interpolation_constant(fields: Sequence[ScalarField], alpha: float = 1.0, theta: float = 0.5,
                           p: float = 2.0) -> Tuple[float, List[float]]:
    """
    Fitted C in [f]_{F^{theta alpha}_p} <= C ||f||_inf^{1-theta} [f]_{F^alpha_{p theta}}^theta
    """
    if p * theta < 1:
        raise ValueError("p * theta must be >= 1")
    ratios = []
    for f in fields:
        lhs = _lp(symmetric_competitor(f, theta * alpha).values, p)
        rhs = f.sup() ** (1.0 - theta) * _lp(symmetric_competitor(f, alpha).values, p * theta) ** theta
        if rhs > 0:
            ratios.append(lhs / rhs)
    return (max(ratios) if ratios else 0.0), ratios


def bmo_report(f: ScalarField) -> NormReport:
    return NormReport(kind=NormKind.BMO, value=bmo_seminorm(f), N=f.grid.points_per_axis)


def gagliardo_report(f: ScalarField, s: float, p: float) -> NormReport:
    return NormReport(kind=NormKind.GAGLIARDO, s=s, p=p, value=gagliardo_seminorm(f, s, p),
                      N=f.grid.points_per_axis)


def lp_report(f: ScalarField, p: float) -> NormReport:
    return NormReport(kind=NormKind.LP, p=p, value=lp_norm(f, p), N=f.grid.points_per_axis)
