# regularity_lab/numerics/torus_core.py
"""
Periodic grids on the flat torus, sampled fields, spectral calculus,
periodic interpolation and the exponential-integrability functional.

Nodes sit at k*h, k = 0..N-1, and each node stands for the cell of side h
centred on it, so grid integrals are plain means (midpoint rule).
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft as sp_fft
from scipy import ndimage

from regularity_lab.app.core.config import get_settings
from regularity_lab.app.core.errors import NumericalFailure

logger = logging.getLogger(__name__)

# largest exponent numpy.exp accepts in float64
EXP_OVERFLOW = 709.0


@dataclass(frozen=True)
class TorusGrid:
    """
    Uniform periodic grid with N points per axis on the unit torus T^dim
    """
    dim: int
    points_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        n = self.points_per_axis
        if n < 8 or n & (n - 1) != 0:
            raise ValueError(f"points_per_axis must be a power of two >= 8, got {n}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.points_per_axis

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    def axes(self) -> List[np.ndarray]:
        return [np.arange(self.points_per_axis) * self.spacing for _ in range(self.dim)]

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def points(self) -> np.ndarray:
        """
        All nodes as an (N^dim, dim) array in row-major order
        """
        return np.stack([c.ravel() for c in self.coordinates()], axis=-1)

    def wavenumbers(self) -> Tuple[np.ndarray, ...]:
        """
        Angular wavenumbers 2*pi*k on the FFT layout
        """
        return _wavenumbers(self.dim, self.points_per_axis)

    def integer_wavenumbers(self) -> Tuple[np.ndarray, ...]:
        k = np.fft.fftfreq(self.points_per_axis, d=1.0 / self.points_per_axis)
        return tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))

    def integrate(self, values: np.ndarray) -> float:
        return float(np.mean(values))

    def refine(self, factor: int = 2) -> "TorusGrid":
        return TorusGrid(self.dim, self.points_per_axis * factor)


@lru_cache(maxsize=32)
def _wavenumbers(dim: int, n: int) -> Tuple[np.ndarray, ...]:
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=1.0 / n)
    return tuple(np.meshgrid(*([k] * dim), indexing="ij"))


@lru_cache(maxsize=32)
def _derivative_symbols(dim: int, n: int) -> Tuple[np.ndarray, ...]:
    """
    i*kappa_j per axis with the Nyquist mode removed (odd derivatives)
    """
    symbols = []
    for kappa in _wavenumbers(dim, n):
        kappa = kappa.copy()
        kappa[np.isclose(np.abs(kappa), np.pi * n)] = 0.0
        symbols.append(1j * kappa)
    return tuple(symbols)


def _fftn(values: np.ndarray) -> np.ndarray:
    return sp_fft.fftn(values, workers=get_settings().threads)


def _ifftn(values: np.ndarray) -> np.ndarray:
    return sp_fft.ifftn(values, workers=get_settings().threads).real


@dataclass(frozen=True, eq=False)
class ScalarField:
    """
    Real values on every node of a TorusGrid
    """
    grid: TorusGrid
    values: np.ndarray
    _cache: Dict[str, np.ndarray] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: TorusGrid, func: Callable[..., np.ndarray]) -> "ScalarField":
        return cls(grid, np.broadcast_to(func(*grid.coordinates()), grid.shape).astype(float))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def mean(self) -> float:
        return self.grid.integrate(self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def spectrum(self) -> np.ndarray:
        if "hat" not in self._cache:
            self._cache["hat"] = _fftn(self.values)
        return self._cache["hat"]


@dataclass(frozen=True, eq=False)
class VectorField:
    """
    dim components on one grid; `divergence_free` fields are checked on construction
    """
    grid: TorusGrid
    components: Tuple[np.ndarray, ...]
    divergence_free: bool = False
    div_tol: float = 1e-8
    _cache: Dict[str, object] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        comps = tuple(np.asarray(c, dtype=float) for c in self.components)
        if len(comps) != self.grid.dim:
            raise ValueError(f"expected {self.grid.dim} components, got {len(comps)}")
        for c in comps:
            if c.shape != self.grid.shape:
                raise ValueError(f"component shape {c.shape} does not match grid {self.grid.shape}")
            if not np.all(np.isfinite(c)):
                raise ValueError("field contains non-finite values")
        object.__setattr__(self, "components", comps)
        if self.divergence_free:
            div = np.max(np.abs(divergence(self).values))
            if div > self.div_tol:
                raise ValueError(f"field flagged divergence-free has max |div| = {div:.3e} > {self.div_tol:.1e}")

    @classmethod
    def from_function(cls, grid: TorusGrid, func: Callable[..., Sequence[np.ndarray]],
                      divergence_free: bool = False, div_tol: float = 1e-8) -> "VectorField":
        comps = func(*grid.coordinates())
        comps = tuple(np.broadcast_to(c, grid.shape).astype(float) for c in comps)
        return cls(grid, comps, divergence_free, div_tol)

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "VectorField":
        return cls(grid, tuple(np.zeros(grid.shape) for _ in range(grid.dim)), True)

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.components[i])

    def stacked(self) -> np.ndarray:
        return np.stack(self.components, axis=0)

    def scaled(self, factor: float) -> "VectorField":
        return VectorField(self.grid, tuple(factor * c for c in self.components),
                           self.divergence_free, self.div_tol)

    def sup(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.stacked() ** 2, axis=0))))


def add_fields(fields: Sequence[VectorField]) -> VectorField:
    grid = fields[0].grid
    comps = tuple(sum(f.components[i] for f in fields) for i in range(grid.dim))
    return VectorField(grid, comps, all(f.divergence_free for f in fields),
                       max(f.div_tol for f in fields))


GridRule = Callable[[float], VectorField]
PointRule = Callable[[float, np.ndarray], np.ndarray]


class TimeDependentField:
    """
    Drift b(t, x) on [0, horizon].

    Built either from an analytic rule t -> VectorField (optionally with an
    exact point rule for off-grid evaluation) or from samples on an
    increasing time mesh, interpolated linearly in t.
    """

    def __init__(self, grid: TorusGrid, horizon: float, grid_rule: GridRule,
                 point_rule: Optional[PointRule] = None, autonomous: bool = False,
                 scheme: str = "cubic", name: str = "drift"):
        if horizon <= 0:
            raise ValueError(f"horizon must be positive, got {horizon}")
        self.grid = grid
        self.horizon = float(horizon)
        self._grid_rule = grid_rule
        self._point_rule = point_rule
        self.autonomous = autonomous
        self.scheme = scheme
        self.name = name
        self._steady: Optional[VectorField] = None

    @classmethod
    def steady(cls, b: VectorField, horizon: float, point_rule: Optional[Callable[[np.ndarray], np.ndarray]] = None,
               name: str = "drift") -> "TimeDependentField":
        rule = None if point_rule is None else (lambda t, pts: point_rule(pts))
        tdf = cls(b.grid, horizon, lambda t: b, rule, autonomous=True, name=name)
        tdf._steady = b
        return tdf

    @classmethod
    def analytic(cls, grid: TorusGrid, grid_rule: GridRule, horizon: float,
                 point_rule: Optional[PointRule] = None, name: str = "drift") -> "TimeDependentField":
        return cls(grid, horizon, grid_rule, point_rule, autonomous=False, name=name)

    @classmethod
    def sampled(cls, times: Sequence[float], fields: Sequence[VectorField],
                name: str = "drift") -> "TimeDependentField":
        times = np.asarray(times, dtype=float)
        if len(times) != len(fields) or len(times) < 2:
            raise ValueError("need at least two samples with one field per time")
        if np.any(np.diff(times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if abs(times[0]) > 1e-12:
            raise ValueError("samples must start at t = 0")
        fields = list(fields)
        grid = fields[0].grid

        def locate(t: float) -> Tuple[int, float]:
            k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
            w = (t - times[k]) / (times[k + 1] - times[k])
            return k, float(np.clip(w, 0.0, 1.0))

        def grid_rule(t: float) -> VectorField:
            k, w = locate(t)
            if w == 0.0:
                return fields[k]
            if w == 1.0:
                return fields[k + 1]
            comps = tuple((1 - w) * a + w * c for a, c in zip(fields[k].components, fields[k + 1].components))
            return VectorField(grid, comps)

        def point_rule(t: float, pts: np.ndarray) -> np.ndarray:
            k, w = locate(t)
            lo = sample_field(fields[k], pts)
            if w == 0.0:
                return lo
            return (1 - w) * lo + w * sample_field(fields[k + 1], pts)

        tdf = cls(grid, float(times[-1]), grid_rule, point_rule, name=name)
        tdf.sample_times = times
        return tdf

    def at(self, t: float) -> VectorField:
        if self._steady is not None:
            return self._steady
        return self._grid_rule(float(t))

    def velocity(self, t: float, points: np.ndarray) -> np.ndarray:
        """
        b(t, points) for an (M, dim) array of points
        """
        points = np.mod(points, 1.0)
        if self._point_rule is not None:
            return np.asarray(self._point_rule(float(t), points), dtype=float).reshape(points.shape)
        return sample_field(self.at(t), points, self.scheme)

    def reversed(self, t_final: float) -> "TimeDependentField":
        """
        The drift s -> -b(t_final - s) that runs the flow backwards
        """
        if t_final > self.horizon + 1e-12:
            raise ValueError(f"t_final {t_final} exceeds horizon {self.horizon}")
        point_rule = lambda s, pts: -self.velocity(t_final - s, pts)
        if self._steady is not None:
            rev = TimeDependentField.steady(self._steady.scaled(-1.0), t_final, name=f"{self.name}-reversed")
            rev._point_rule = point_rule
            return rev
        return TimeDependentField(self.grid, t_final, lambda s: self.at(t_final - s).scaled(-1.0),
                                  point_rule, self.autonomous, self.scheme, f"{self.name}-reversed")

    @staticmethod
    def superpose(fields: Sequence["TimeDependentField"], name: str = "superposition") -> "TimeDependentField":
        horizon = min(f.horizon for f in fields)
        grid = fields[0].grid
        grid_rule = lambda t: add_fields([f.at(t) for f in fields])
        point_rule = lambda t, pts: sum(f.velocity(t, pts) for f in fields)
        return TimeDependentField(grid, horizon, grid_rule, point_rule,
                                  all(f.autonomous for f in fields), fields[0].scheme, name)

    def sup_divergence(self, times: Sequence[float]) -> float:
        return max(float(np.max(np.abs(divergence(self.at(t)).values))) for t in times)


def torus_distance(x, y) -> Union[float, np.ndarray]:
    """
    Geodesic distance on the unit torus.

    Scalars are 1D points; otherwise the last axis holds coordinates. The
    per-axis wrapped difference equals the lattice minimum over |k| <= 2.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = np.abs(np.mod(x, 1.0) - np.mod(y, 1.0))
    diff = np.minimum(diff, 1.0 - diff)
    if diff.ndim == 0:
        return float(diff)
    dist = np.sqrt(np.sum(diff ** 2, axis=-1))
    return float(dist) if np.ndim(dist) == 0 else dist


def spectral_gradient(f: ScalarField) -> VectorField:
    if not np.all(np.isfinite(f.values)):
        raise ValueError("field contains non-finite values")
    f_hat = f.spectrum()
    symbols = _derivative_symbols(f.grid.dim, f.grid.points_per_axis)
    return VectorField(f.grid, tuple(_ifftn(s * f_hat) for s in symbols))


def divergence(v: VectorField) -> ScalarField:
    symbols = _derivative_symbols(v.grid.dim, v.grid.points_per_axis)
    div_hat = sum(s * _fftn(c) for s, c in zip(symbols, v.components))
    return ScalarField(v.grid, _ifftn(div_hat))


def spectral_potential(v: VectorField) -> ScalarField:
    """
    Zero-mean phi whose spectral gradient is the gradient part of v
    """
    symbols = _derivative_symbols(v.grid.dim, v.grid.points_per_axis)
    k2 = sum(np.abs(s) ** 2 for s in symbols)
    numer = sum(np.conj(s) * _fftn(c) for s, c in zip(symbols, v.components))
    k2_safe = np.where(k2 == 0, 1.0, k2)
    phi_hat = np.where(k2 == 0, 0.0, numer / k2_safe)
    return ScalarField(v.grid, _ifftn(phi_hat))


def jacobian(v: VectorField, method: str = "spectral") -> np.ndarray:
    """
    J[i, j] = d_j v_i as a (dim, dim, *shape) array
    """
    grid = v.grid
    out = np.empty((grid.dim, grid.dim) + grid.shape)
    if method == "spectral":
        symbols = _derivative_symbols(grid.dim, grid.points_per_axis)
        for i, comp in enumerate(v.components):
            c_hat = _fftn(comp)
            for j, s in enumerate(symbols):
                out[i, j] = _ifftn(s * c_hat)
    elif method == "fd":
        h = grid.spacing
        for i, comp in enumerate(v.components):
            for j in range(grid.dim):
                out[i, j] = (np.roll(comp, -1, axis=j) - np.roll(comp, 1, axis=j)) / (2.0 * h)
    else:
        raise ValueError(f"unknown derivative method '{method}'")
    return out


def gradient_magnitude(v: VectorField, method: str = "spectral") -> ScalarField:
    """
    Frobenius norm of the Jacobian at every node
    """
    key = f"gradmag-{method}"
    if key not in v._cache:
        jac = jacobian(v, method)
        v._cache[key] = np.sqrt(np.sum(jac ** 2, axis=(0, 1)))
    return ScalarField(v.grid, v._cache[key])


def _spline_coefficients(values: np.ndarray, cache: Dict) -> np.ndarray:
    key = id(values)
    coeffs = cache.get(("spline", key))
    if coeffs is None:
        coeffs = ndimage.spline_filter(values, order=3, mode="grid-wrap")
        cache[("spline", key)] = coeffs
    return coeffs


def _interpolate_array(values: np.ndarray, cache: Dict, points: np.ndarray, scheme: str) -> np.ndarray:
    n = values.shape[0]
    idx = np.mod(points, 1.0) * n
    coords = idx.T
    if scheme == "cubic":
        out = ndimage.map_coordinates(_spline_coefficients(values, cache), coords, order=3,
                                      mode="grid-wrap", prefilter=False)
    elif scheme == "linear":
        out = ndimage.map_coordinates(values, coords, order=1, mode="grid-wrap")
    else:
        raise ValueError(f"unknown interpolation scheme '{scheme}'")
    nodes = np.all(idx == np.round(idx), axis=1)
    if np.any(nodes):
        at = np.round(idx[nodes]).astype(int) % n
        out[nodes] = values[tuple(at.T)]
    return out


def _as_points(p, dim: int) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(p, dtype=float)
    if dim == 1 and arr.ndim <= 1:
        single = arr.ndim == 0
        return arr.reshape(-1, 1), single
    single = arr.ndim == 1
    return arr.reshape(-1, dim), single


def sample_field(f: Union[ScalarField, VectorField], p, scheme: str = "cubic"):
    """
    Periodic interpolation of a field at off-grid points.

    Returns a scalar (or (dim,) vector) for a single point and an (M,) or
    (M, dim) array otherwise. Nodes return the stored values exactly.
    """
    pts, single = _as_points(p, f.grid.dim)
    if isinstance(f, ScalarField):
        out = _interpolate_array(f.values, f._cache, pts, scheme)
        return float(out[0]) if single else out
    out = np.stack([_interpolate_array(c, f._cache, pts, scheme) for c in f.components], axis=-1)
    return out[0] if single else out


def exp_integrability(b: VectorField, beta: float, method: str = "spectral") -> float:
    """
    Grid quadrature of exp(beta * |grad b|)
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    grad = gradient_magnitude(b, method).values
    peak = float(np.max(grad))
    if beta * peak > EXP_OVERFLOW:
        raise NumericalFailure("beta too large for this field",
                               {"beta": beta, "max_gradient": peak, "max_exponent": beta * peak})
    return float(np.mean(np.exp(beta * grad)))


def sup_exp_integrability(b: TimeDependentField, beta: float, times: Sequence[float]) -> float:
    return max(exp_integrability(b.at(t), beta) for t in times)
