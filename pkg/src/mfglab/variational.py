"""Single-agent problems against a frozen flow: HJB value, feedback, best responses."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .costs import tables_for_flow
from .grids import SpaceGrid
from .kernels import CostTables
from .measures import Box, MarginalFlow, TimeGrid, Trajectory
from .model import ModelSpec

DEFAULT_NX = {1: 256, 2: 64}
DEFAULT_K = {1: 16, 2: 8}
REFINE_STEPS = 30


class BoxEscapeError(RuntimeError):
    """A foot of characteristic from inside the trajectory box left the grid."""


class ClampWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class ValueGrid:
    space: SpaceGrid
    grid: TimeGrid
    values: np.ndarray  # (n_t + 1, nodes)

    def __post_init__(self):
        if self.values.shape != (self.grid.steps + 1, self.space.size):
            raise ValueError("value array does not match the grids")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("value grid has non-finite entries")

    def slice_array(self, k: int) -> np.ndarray:
        return self.values[k].reshape(tuple(self.space.n))


@dataclass(frozen=True, eq=False)
class FeedbackGrid:
    space: SpaceGrid
    grid: TimeGrid
    velocity: np.ndarray  # (n_t, nodes, d)
    bound: float
    clamps: int = 0

    def __post_init__(self):
        if self.velocity.shape != (self.grid.steps, self.space.size, self.space.dim):
            raise ValueError("feedback array does not match the grids")


def space_grid(model: ModelSpec, grid: TimeGrid, n_x=None) -> SpaceGrid:
    d = model.dim
    if d > 2:
        raise ValueError("grid solvers support one and two space dimensions")
    n_x = DEFAULT_NX[d] if n_x is None else n_x
    return SpaceGrid.build(model.box, n_x, model.velocity_bound * grid.dt)


def hjb_from_tables(
    tab: CostTables, space: SpaceGrid, grid: TimeGrid, C: float, K: int | None = None, refine: int = REFINE_STEPS
) -> tuple[ValueGrid, FeedbackGrid]:
    d = space.dim
    K = DEFAULT_K[d] if K is None else int(K)
    nn = space.size
    U = np.empty((grid.steps + 1, nn))
    A = np.empty((grid.steps, nn, d))
    clamps = np.zeros((grid.steps, nn), dtype=np.int64)
    core = np.zeros((grid.steps, nn), dtype=np.int64)
    sweep = kernels.kernel("hjb_1d" if d == 1 else "hjb_2d")
    sweep(tab, *space.arrays(), float(C), K, int(refine), space.core.lo, space.core.hi, U, A, clamps, core)
    if core.any():
        k, q = np.argwhere(core)[0]
        raise BoxEscapeError(
            f"foot of characteristic from node {space.nodes()[q]} at step {k} left the grid; the velocity bound is too small"
        )
    return ValueGrid(space, grid, U), FeedbackGrid(space, grid, A, float(C), int(clamps.sum()))


def solve_hjb(
    model: ModelSpec,
    flow: MarginalFlow,
    n_x=None,
    K: int | None = None,
    refine: int = REFINE_STEPS,
    mode: str = "auto",
) -> tuple[ValueGrid, FeedbackGrid]:
    """Backward semi-Lagrangian recursion for the value and the argmin feedback against ``flow``."""
    space = space_grid(model, flow.grid, n_x)
    tab = tables_for_flow(model, flow, space, mode)
    return hjb_from_tables(tab, space, flow.grid, model.velocity_bound, K, refine)


def integrate_characteristics(x0s, fb: FeedbackGrid) -> tuple[np.ndarray, np.ndarray]:
    """Euler paths ``(P, n_t + 1, d)`` along the interpolated feedback, and clamp counts per path."""
    x0s = np.ascontiguousarray(np.atleast_2d(x0s), dtype=float)
    P = x0s.shape[0]
    paths = np.empty((P, fb.grid.steps + 1, fb.space.dim))
    clamps = np.zeros(P, dtype=np.int64)
    kernels.kernel("characteristics")(fb.velocity, *fb.space.arrays(), fb.grid.dt, x0s, paths, clamps)
    return paths, clamps


def integrate_characteristic(x0, fb: FeedbackGrid) -> Trajectory:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not fb.space.box.contains(x0):
        raise ValueError(f"x0={x0} outside the grid box")
    paths, clamps = integrate_characteristics(x0[None], fb)
    if clamps[0]:
        warnings.warn(f"characteristic from {x0} was clamped {clamps[0]} times", ClampWarning, stacklevel=2)
    return Trajectory(fb.grid, paths[0])


@dataclass(frozen=True, eq=False)
class BestResponse:
    trajectory: Trajectory
    cost: float
    converged: bool
    iterations: int
    pg_norm: float


def initial_scaling(model: ModelSpec, grid: TimeGrid) -> float:
    """Inverse curvature of the kinetic term, the starting inverse Hessian of L-BFGS."""
    return 1.0 / (2.0 * model.lagrangian.bounds(model.box).lower * grid.dt)


def transcribe_batch(
    tab: CostTables,
    x0s: np.ndarray,
    V0: np.ndarray,
    C: float,
    h0: float,
    tol: float = 1e-8,
    max_iter: int = 500,
    memory: int = 10,
):
    """Projected L-BFGS for many start points. Returns ``(paths, J, iterations, pg, converged)``."""
    x0s = np.ascontiguousarray(x0s, dtype=float)
    V = np.ascontiguousarray(V0, dtype=float).copy()
    P, n, d = V.shape
    J = np.empty(P)
    it = np.empty(P, dtype=np.int64)
    pg = np.empty(P)
    ok = np.empty(P, dtype=np.bool_)
    kernels.kernel("transcribe")(tab, x0s, V, float(C), float(tol), int(max_iter), int(memory), float(h0), J, it, pg, ok)
    paths = np.empty((P, n + 1, d))
    paths[:, 0] = x0s
    # prefix sums in the same order as the objective
    for k in range(n):
        paths[:, k + 1] = paths[:, k] + tab.dt * V[:, k]
    return paths, J, it, pg, ok


def path_costs(tab: CostTables, paths: np.ndarray) -> np.ndarray:
    paths = np.ascontiguousarray(paths, dtype=float)
    out = np.empty(paths.shape[0])
    kernels.kernel("path_costs")(tab, paths, out)
    return out


def best_response_transcription(
    model: ModelSpec,
    flow: MarginalFlow,
    x0,
    warm_start: Trajectory | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
    n_x=None,
    mode: str = "auto",
) -> BestResponse:
    """Minimise the discrete path cost over velocities bounded by ``C``.

    Without ``warm_start`` the characteristic of the HJB feedback is used.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    grid = flow.grid
    space = space_grid(model, grid, n_x) if model.dim <= 2 else None
    tab = tables_for_flow(model, flow, space, mode if space is not None else "exact")
    if warm_start is None:
        if space is None:
            start = np.repeat(x0[None], grid.steps + 1, axis=0)
        else:
            _, fb = hjb_from_tables(tab, space, grid, model.velocity_bound)
            start = integrate_characteristics(x0[None], fb)[0][0]
    else:
        if warm_start.grid != grid:
            raise ValueError("warm start lives on a different time grid")
        start = warm_start.positions
    V0 = (np.diff(start, axis=0) / grid.dt)[None]
    paths, J, it, pg, ok = transcribe_batch(
        tab, x0[None], V0, model.velocity_bound, initial_scaling(model, grid), tol, max_iter
    )
    cost = float(path_costs(tab, paths)[0])
    return BestResponse(Trajectory(grid, paths[0]), cost, bool(ok[0]), int(it[0]), float(pg[0]))


# -- accessors and regularity -----------------------------------------------------------


def _locate(x, lo, h, n):
    s = (x - lo) / h
    r = np.round(s)
    s = np.where(np.abs(s - r) <= 1e-9, r, s)
    i = np.clip(np.floor(s).astype(np.int64), 0, n - 2)
    return i, s - i


def value_of(vg: ValueGrid, x, t: float) -> float:
    """Multilinear-in-space, linear-in-time interpolation; node queries return stored values."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sp = vg.space
    if x.size != sp.dim or not sp.box.contains(x, tol=1e-12):
        raise ValueError(f"x={x} outside the value grid")
    if not 0.0 <= t <= vg.grid.horizon:
        raise ValueError(f"t={t} outside [0, {vg.grid.horizon}]")
    idx = []
    frac = []
    for a in range(sp.dim):
        i, f = _locate(x[a], sp.lo[a], sp.h[a], sp.n[a])
        idx.append(int(i))
        frac.append(float(f))
    kt, ft = _locate(t, 0.0, vg.grid.dt, vg.grid.steps + 1)
    kt, ft = int(kt), float(ft)

    def at_slice(k):
        u = vg.slice_array(k)
        total = 0.0
        for corner in np.ndindex(*(2,) * sp.dim):
            wgt = 1.0
            for a, c in enumerate(corner):
                wgt *= frac[a] if c else 1.0 - frac[a]
            if wgt:
                total += wgt * u[tuple(idx[a] + c for a, c in enumerate(corner))]
        return total

    if ft == 0.0:
        return float(at_slice(kt))
    if ft == 1.0:
        return float(at_slice(kt + 1))
    return float((1.0 - ft) * at_slice(kt) + ft * at_slice(kt + 1))


def _mask(vg: ValueGrid, box: Box | None) -> np.ndarray:
    if box is None:
        return np.ones(tuple(vg.space.n), dtype=bool)
    return box.contains(vg.space.nodes(), tol=1e-12).reshape(tuple(vg.space.n))


def lipschitz_estimate(vg: ValueGrid, box: Box | None = None) -> tuple[float, float]:
    """Largest difference quotients over adjacent node pairs: ``(space, time)``.

    With ``box`` only pairs whose nodes both lie in the box are used.
    """
    sp = vg.space
    mask = _mask(vg, box)
    u = vg.values.reshape((vg.grid.steps + 1,) + tuple(sp.n))
    space_lip = 0.0
    for a in range(sp.dim):
        du = np.abs(np.diff(u, axis=a + 1)) / sp.h[a]
        m = np.logical_and(np.delete(mask, -1, axis=a), np.delete(mask, 0, axis=a))
        if m.any():
            space_lip = max(space_lip, float(du[:, m].max()))
    dt_lip = np.abs(np.diff(u, axis=0)) / vg.grid.dt
    time_lip = float(dt_lip[:, mask].max()) if mask.any() else 0.0
    return space_lip, time_lip


def semiconcavity_estimate(vg: ValueGrid, box: Box | None = None) -> float:
    """Largest second centred difference along grid axes over interior nodes and all slices."""
    sp = vg.space
    mask = _mask(vg, box)
    u = vg.values.reshape((vg.grid.steps + 1,) + tuple(sp.n))
    best = -np.inf
    for a in range(sp.dim):
        n = sp.n[a]
        lo = np.take(u, np.arange(0, n - 2), axis=a + 1)
        mid = np.take(u, np.arange(1, n - 1), axis=a + 1)
        hi = np.take(u, np.arange(2, n), axis=a + 1)
        d2 = (hi + lo - 2.0 * mid) / sp.h[a] ** 2
        m = np.take(mask, np.arange(0, n - 2), axis=a) & np.take(mask, np.arange(1, n - 1), axis=a) & np.take(mask, np.arange(2, n), axis=a)
        if m.any():
            best = max(best, float(d2[:, m].max()))
    return float(best)


__all__ = [
    "SpaceGrid",
    "ValueGrid",
    "FeedbackGrid",
    "BestResponse",
    "BoxEscapeError",
    "ClampWarning",
    "space_grid",
    "solve_hjb",
    "hjb_from_tables",
    "integrate_characteristic",
    "integrate_characteristics",
    "best_response_transcription",
    "transcribe_batch",
    "path_costs",
    "initial_scaling",
    "value_of",
    "lipschitz_estimate",
    "semiconcavity_estimate",
]
