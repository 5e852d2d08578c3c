# regularity_lab/numerics/families.py
"""
Named analytic drifts and initial data referenced by experiment configs.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from regularity_lab.numerics.torus_core import (
    ScalarField,
    TimeDependentField,
    TorusGrid,
    VectorField,
    _fftn,
    _ifftn,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


def smooth_step(u: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    C^3 step S(u) rising from 0 at u <= 0 to 1 at u >= 1, with S' and S''
    """
    u = np.clip(u, 0.0, 1.0)
    s = u ** 4 * (35.0 - 84.0 * u + 70.0 * u ** 2 - 20.0 * u ** 3)
    ds = 140.0 * u ** 3 * (1.0 - u) ** 3
    d2s = 420.0 * u ** 2 * (1.0 - u) ** 2 * (1.0 - 2.0 * u)
    return s, ds, d2s


def plateau(s: np.ndarray, inner: float, outer: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Even cutoff equal to 1 for |s| <= inner and 0 for |s| >= outer, with its
    first two derivatives in s
    """
    if not 0 < inner < outer:
        raise ValueError(f"need 0 < inner < outer, got {inner}, {outer}")
    width = outer - inner
    val, d1, d2 = smooth_step((outer - np.abs(s)) / width)
    return val, -np.sign(s) * d1 / width, d2 / width ** 2


@dataclass(frozen=True)
class TrigonometricField:
    """
    f(x) = sum_k a_k cos(2 pi k.x) + b_k sin(2 pi k.x) with integer modes k
    """
    modes: np.ndarray
    cos_coef: np.ndarray
    sin_coef: np.ndarray

    @classmethod
    def random(cls, dim: int, max_mode: int, seed: int, decay: float = 1.0) -> "TrigonometricField":
        rng = np.random.default_rng(seed)
        axis = np.arange(-max_mode, max_mode + 1)
        grid = np.array(np.meshgrid(*([axis] * dim), indexing="ij")).reshape(dim, -1).T
        # one representative of each +-k pair, k != 0
        keep = [k for k in grid if tuple(k) > tuple(-k)]
        modes = np.array(keep, dtype=int)
        weight = (1.0 + np.sum(modes ** 2, axis=1)) ** (-decay / 2.0)
        return cls(modes, rng.standard_normal(len(modes)) * weight, rng.standard_normal(len(modes)) * weight)

    def _phase(self, points: np.ndarray) -> np.ndarray:
        return TWO_PI * points @ self.modes.T

    def values(self, points: np.ndarray) -> np.ndarray:
        ph = self._phase(points)
        return np.cos(ph) @ self.cos_coef + np.sin(ph) @ self.sin_coef

    def gradient(self, points: np.ndarray) -> np.ndarray:
        ph = self._phase(points)
        amp = -np.sin(ph) * self.cos_coef + np.cos(ph) * self.sin_coef
        return TWO_PI * amp @ self.modes

    def scaled(self, factor: float) -> "TrigonometricField":
        return TrigonometricField(self.modes, factor * self.cos_coef, factor * self.sin_coef)

    def on_grid(self, grid: TorusGrid) -> ScalarField:
        return ScalarField(grid, self.values(grid.points()).reshape(grid.shape))


def _rotated_gradient(stream: TrigonometricField, points: np.ndarray) -> np.ndarray:
    grad = stream.gradient(points)
    return np.stack([-grad[:, 1], grad[:, 0]], axis=-1)


def _steady_from_points(grid: TorusGrid, rule, horizon: float, name: str,
                        divergence_free: bool = False, div_tol: float = 1e-8) -> TimeDependentField:
    comps = rule(grid.points())
    field = VectorField(grid, tuple(comps[:, i].reshape(grid.shape) for i in range(grid.dim)),
                        divergence_free, div_tol)
    return TimeDependentField.steady(field, horizon, point_rule=rule, name=name)


def log_drift_values(points: np.ndarray, plateau_end: float = 0.4, cutoff_end: float = 0.6) -> np.ndarray:
    """
    -x log x on [0, plateau_end], smoothly switched off by cutoff_end
    """
    x = np.mod(points[:, 0], 1.0)
    safe = np.where(x > 0, x, 1.0)
    core = np.where(x > 0, -safe * np.log(safe), 0.0)
    switch, _, _ = smooth_step((cutoff_end - x) / (cutoff_end - plateau_end))
    return (core * switch).reshape(-1, 1)


def build_drift(family: str, grid: TorusGrid, params: Optional[Dict[str, Any]] = None,
                horizon: float = 1.0, div_tol: float = 1e-8) -> TimeDependentField:
    """
    Steady analytic drift families with exact point evaluation
    """
    params = params or {}
    dim = grid.dim
    if family == "zero":
        return _steady_from_points(grid, lambda p: np.zeros_like(p), horizon, family, True, div_tol)
    if family == "translation":
        velocity = np.asarray(params.get("velocity", [1.0] + [0.0] * (dim - 1)), dtype=float)
        return _steady_from_points(grid, lambda p: np.broadcast_to(velocity, p.shape).copy(),
                                   horizon, family, True, div_tol)
    if family == "shear":
        if dim != 2:
            raise ValueError("shear drift lives on T^2")
        amp = float(params.get("amplitude", 1.0))
        rule = lambda p: np.stack([amp * np.sin(TWO_PI * p[:, 1]), np.zeros(len(p))], axis=-1)
        return _steady_from_points(grid, rule, horizon, family, True, div_tol)
    if family == "compressible_shear":
        s = float(params.get("amplitude", 0.1))
        if dim == 1:
            rule = lambda p: (s * np.sin(TWO_PI * p[:, 0])).reshape(-1, 1)
        else:
            rule = lambda p: np.stack([s * np.sin(TWO_PI * p[:, 0]), np.zeros(len(p))], axis=-1)
        return _steady_from_points(grid, rule, horizon, family)
    if family == "log_drift":
        if dim != 1:
            raise ValueError("log_drift lives on T^1")
        return _steady_from_points(grid, log_drift_values, horizon, family)
    if family == "smooth_random":
        amp = float(params.get("amplitude", 0.1))
        field = TrigonometricField.random(dim, int(params.get("max_mode", 3)), int(params.get("seed", 0)))
        if dim == 1:
            vals = field.values(grid.points())
            field = field.scaled(amp / np.max(np.abs(vals)))
            return _steady_from_points(grid, lambda p: field.values(p).reshape(-1, 1), horizon, family)
        speed = np.max(np.linalg.norm(_rotated_gradient(field, grid.points()), axis=1))
        field = field.scaled(amp / speed)
        return _steady_from_points(grid, lambda p: _rotated_gradient(field, p), horizon, family, True, div_tol)
    raise ValueError(f"unknown drift family '{family}'")


def mollify(f: ScalarField, scale: float) -> ScalarField:
    """
    Gaussian mollification at the given length scale (Fourier multiplier)
    """
    if scale <= 0:
        return f
    k2 = sum(k ** 2 for k in f.grid.wavenumbers())
    return f.with_values(_ifftn(np.exp(-0.5 * k2 * scale ** 2) * _fftn(f.values)))


def build_initial(family: str, grid: TorusGrid, params: Optional[Dict[str, Any]] = None) -> ScalarField:
    """
    Initial data families for transport and Euler runs
    """
    params = params or {}
    coords = grid.coordinates()
    if family == "constant":
        return ScalarField.constant(grid, params.get("value", 1.0))
    if family == "sin":
        mode = int(params.get("mode", 1))
        axis = int(params.get("axis", 0))
        return ScalarField(grid, float(params.get("amplitude", 1.0)) * np.sin(TWO_PI * mode * coords[axis]))
    if family == "cos":
        mode = int(params.get("mode", 1))
        axis = int(params.get("axis", 0))
        return ScalarField(grid, float(params.get("amplitude", 1.0)) * np.cos(TWO_PI * mode * coords[axis]))
    if family == "smoothed_indicator":
        lo, hi = params.get("interval", [0.25, 0.75])
        mask = np.ones(grid.shape)
        for c in coords:
            mask *= (c >= lo) & (c < hi)
        scale = float(params.get("mollify", 4.0 * grid.spacing))
        return mollify(ScalarField(grid, mask), scale)
    if family == "band_limited":
        field = TrigonometricField.random(grid.dim, int(params.get("max_mode", 4)), int(params.get("seed", 0)))
        values = field.values(grid.points()).reshape(grid.shape)
        return ScalarField(grid, float(params.get("amplitude", 1.0)) * values / np.max(np.abs(values)))
    if family == "distance":
        pts = grid.points()
        dist = np.sqrt(np.sum(np.minimum(pts, 1.0 - pts) ** 2, axis=1))
        return ScalarField(grid, dist.reshape(grid.shape))
    if family == "vortex_patch":
        from regularity_lab.numerics.euler2d import smoothed_vortex_patch
        return smoothed_vortex_patch(grid, float(params.get("radius", 0.2)),
                                     tuple(params.get("center", (0.5, 0.5))),
                                     params.get("mollify")).omega
    raise ValueError(f"unknown initial data family '{family}'")
