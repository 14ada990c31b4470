"""Particle representations of path measures, their time marginals and initial laws."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

WEIGHT_TOL = 1e-12


def _check_weights(weights: np.ndarray, what: str) -> None:
    if weights.ndim != 1:
        raise ValueError(f"{what}: weights must be one-dimensional")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError(f"{what}: weights must be finite and non-negative")
    total = weights.sum()
    if abs(total - 1.0) > WEIGHT_TOL:
        raise ValueError(f"{what}: weights sum to {total!r}, not 1")


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi < lo) or not np.all(np.isfinite(lo) & np.isfinite(hi)):
            raise ValueError(f"invalid box [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def inflate(self, margin) -> Box:
        return Box(self.lo - margin, self.hi + margin)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return np.all((p >= self.lo - tol) & (p <= self.hi + tol), axis=-1)


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: TimeGrid
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[0] != self.grid.steps + 1:
            raise ValueError(f"trajectory has {pos.shape[0]} positions for {self.grid.steps + 1} nodes")
        if not np.all(np.isfinite(pos)):
            raise ValueError("trajectory positions must be finite")
        object.__setattr__(self, "positions", pos)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True, eq=False)
class ParticleMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float)
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights differ in length")
        _check_weights(w, "ParticleMeasure")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> ParticleMeasure:
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.weights.size


@dataclass(frozen=True, eq=False)
class PathMeasure:
    """Finitely many weighted paths, keyed by their initial points.

    ``paths[i, 0]`` is always ``initial[i]`` bit for bit, so the disintegration
    with respect to the initial law is read off directly from the keys.
    """

    grid: TimeGrid
    initial: np.ndarray
    paths: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        paths = np.asarray(self.paths, dtype=float)
        if paths.ndim == 2:
            paths = paths[:, :, None]
        init = np.asarray(self.initial, dtype=float).reshape(paths.shape[0], paths.shape[2])
        w = np.asarray(self.weights, dtype=float)
        if paths.shape[1] != self.grid.steps + 1:
            raise ValueError("paths do not match the time grid")
        if w.shape[0] != paths.shape[0]:
            raise ValueError("weights do not match the number of paths")
        _check_weights(w, "PathMeasure")
        if not np.array_equal(paths[:, 0, :], init):
            raise ValueError("every path must start at its initial point")
        if not np.all(np.isfinite(paths)):
            raise ValueError("paths must be finite")
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_trajectories(cls, trajectories: list[Trajectory], weights) -> PathMeasure:
        grid = trajectories[0].grid
        paths = np.stack([t.positions for t in trajectories])
        return cls(grid, paths[:, 0, :].copy(), paths, weights)

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    def __len__(self) -> int:
        return self.weights.size

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.grid, self.paths[i])


@dataclass(frozen=True, eq=False)
class MarginalFlow:
    """Time marginals on a grid: ``points[k]`` with ``weights[k]`` is the slice at ``t_k``."""

    grid: TimeGrid
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 2:
            pts = pts[:, :, None]
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 1:
            w = np.broadcast_to(w, pts.shape[:2])
        if pts.shape[0] != self.grid.steps + 1 or w.shape != pts.shape[:2]:
            raise ValueError("flow arrays do not match the time grid")
        for k in range(w.shape[0]):
            _check_weights(w[k], f"MarginalFlow slice {k}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[2]

    def slice(self, k: int) -> ParticleMeasure:
        return ParticleMeasure(self.points[k], self.weights[k])

    @property
    def slices(self) -> list[ParticleMeasure]:
        return [self.slice(k) for k in range(self.grid.steps + 1)]


# -- initial laws ---------------------------------------------------------------------

INITIAL_KINDS = ("uniform-box", "truncated-gaussian", "weighted-samples")


@dataclass(frozen=True, eq=False)
class InitialLaw:
    """Initial distribution m_0 with compact support.

    The truncated Gaussian has independent coordinates (diagonal covariance),
    so its marginals are one-dimensional truncated normals.
    """

    kind: str
    support: Box
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    points: np.ndarray | None = None
    weights: np.ndarray | None = None
    _marginals: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind not in INITIAL_KINDS:
            raise ValueError(f"unknown initial law kind {self.kind!r}")
        if self.kind == "truncated-gaussian":
            lo, hi = self.support.lo, self.support.hi
            a = (lo - self.mean) / self.std
            b = (hi - self.mean) / self.std
            margs = tuple(stats.truncnorm(a[i], b[i], loc=self.mean[i], scale=self.std[i]) for i in range(self.dim))
            object.__setattr__(self, "_marginals", margs)
        if self.kind != "weighted-samples":
            mass = self.total_mass()
            if abs(mass - 1.0) > 1e-6:
                raise ValueError(f"initial density integrates to {mass}, not 1")

    @classmethod
    def uniform_box(cls, lo, hi) -> InitialLaw:
        box = Box(lo, hi)
        if np.any(box.hi <= box.lo):
            raise ValueError("uniform box must have positive volume")
        return cls("uniform-box", box)

    @classmethod
    def truncated_gaussian(cls, mean, std, lo, hi) -> InitialLaw:
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        std = np.atleast_1d(np.asarray(std, dtype=float)) * np.ones_like(mean)
        if np.any(std <= 0):
            raise ValueError("standard deviations must be positive")
        return cls("truncated-gaussian", Box(lo, hi), mean=mean, std=std)

    @classmethod
    def weighted_samples(cls, points, weights=None) -> InitialLaw:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.full(pts.shape[0], 1.0 / pts.shape[0]) if weights is None else np.asarray(weights, dtype=float)
        _check_weights(w, "weighted-samples")
        return cls("weighted-samples", Box(pts.min(axis=0), pts.max(axis=0)), points=pts, weights=w)

    @property
    def dim(self) -> int:
        return self.support.dim

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform-box":
            vol = np.prod(self.support.hi - self.support.lo)
            return np.where(self.support.contains(x), 1.0 / vol, 0.0)
        if self.kind == "truncated-gaussian":
            out = np.ones(x.shape[:-1])
            for i, m in enumerate(self._marginals):
                out = out * m.pdf(x[..., i])
            return out
        raise ValueError("weighted-samples law has no density")

    def total_mass(self, order: int = 64) -> float:
        if self.kind == "weighted-samples":
            return float(np.sum(self.weights))
        nodes, wts = np.polynomial.legendre.leggauss(order)
        total = 1.0
        # the analytic kinds are products of one-dimensional factors
        for i in range(self.dim):
            a, b = self.support.lo[i], self.support.hi[i]
            x = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            if self.kind == "uniform-box":
                f = np.full_like(x, 1.0 / (b - a))
            else:
                f = self._marginals[i].pdf(x)
            total *= 0.5 * (b - a) * float(wts @ f)
        return total

    def marginal_ppf(self, axis: int, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.kind == "uniform-box":
            a, b = self.support.lo[axis], self.support.hi[axis]
            return a + q * (b - a)
        if self.kind == "truncated-gaussian":
            return self._marginals[axis].ppf(q)
        raise ValueError("weighted-samples law has no quantile function")

    def marginal_cdf(self, axis: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform-box":
            a, b = self.support.lo[axis], self.support.hi[axis]
            return np.clip((x - a) / (b - a), 0.0, 1.0)
        if self.kind == "truncated-gaussian":
            return self._marginals[axis].cdf(x)
        raise ValueError("weighted-samples law has no distribution function")


def sample_initial(law: InitialLaw, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. draws from ``law``; the stored atoms for ``weighted-samples``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if law.kind == "weighted-samples":
        if n != law.points.shape[0]:
            raise ValueError(f"weighted-samples law stores {law.points.shape[0]} points, requested {n}")
        return law.points.copy()
    rng = np.random.default_rng(seed)
    if law.kind == "uniform-box":
        return rng.uniform(law.support.lo, law.support.hi, size=(n, law.dim))
    # inverse-CDF sampling keeps draws inside the truncation box by construction
    u = rng.uniform(size=(n, law.dim))
    out = np.empty_like(u)
    for i in range(law.dim):
        out[:, i] = law.marginal_ppf(i, u[:, i])
    return np.clip(out, law.support.lo, law.support.hi)


def quadrature_particles(law: InitialLaw, n: int) -> ParticleMeasure:
    """Equal-mass quantile discretisation of ``law`` with ``n`` atoms.

    In one dimension atom ``i`` sits at the quantile ``(i + 1/2) / n``. In ``d``
    dimensions ``n`` must be a ``d``-th power and the atoms form the tensor
    grid of the per-coordinate quantiles.
    """
    if law.kind == "weighted-samples":
        raise ValueError("quadrature_particles needs an analytic initial law")
    if n < 1:
        raise ValueError("n must be at least 1")
    d = law.dim
    per_axis = int(round(n ** (1.0 / d)))
    if per_axis**d != n:
        raise ValueError(f"n={n} is not a {d}-th power")
    q = (np.arange(per_axis) + 0.5) / per_axis
    axes = [law.marginal_ppf(i, q) for i in range(d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(n, d)
    return ParticleMeasure(pts, np.full(n, 1.0 / n))


def initial_atoms(law: InitialLaw, n: int) -> ParticleMeasure:
    """Atoms used for the limit solve: stored samples or quantile quadrature."""
    if law.kind == "weighted-samples":
        return ParticleMeasure(law.points, law.weights)
    return quadrature_particles(law, n)


# -- operations on paths --------------------------------------------------------------


def evaluate_at(m: PathMeasure, t: float) -> ParticleMeasure:
    nodes = m.grid.nodes
    if not 0.0 <= t <= m.grid.horizon:
        raise ValueError(f"t={t} outside [0, {m.grid.horizon}]")
    k = int(np.searchsorted(nodes, t))
    if k <= m.grid.steps and nodes[k] == t:
        return ParticleMeasure(m.paths[:, k, :], m.weights)
    k -= 1
    theta = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
    pts = (1.0 - theta) * m.paths[:, k, :] + theta * m.paths[:, k + 1, :]
    return ParticleMeasure(pts, m.weights)


def pushforward_marginals(m: PathMeasure) -> MarginalFlow:
    pts = np.ascontiguousarray(m.paths.transpose(1, 0, 2))
    w = np.broadcast_to(m.weights, pts.shape[:2]).copy()
    return MarginalFlow(m.grid, pts, w)


def velocities(path: Trajectory) -> np.ndarray:
    return np.diff(path.positions, axis=0) / path.grid.dt


def trajectory_box(law: InitialLaw, velocity_bound: float, horizon: float) -> Box:
    """Support box of m_0 inflated by ``C * T`` per coordinate."""
    if velocity_bound < 0:
        raise ValueError("velocity bound must be non-negative")
    return law.support.inflate(velocity_bound * horizon)


__all__ = [
    "Box",
    "TimeGrid",
    "Trajectory",
    "ParticleMeasure",
    "PathMeasure",
    "MarginalFlow",
    "InitialLaw",
    "sample_initial",
    "quadrature_particles",
    "initial_atoms",
    "evaluate_at",
    "pushforward_marginals",
    "velocities",
    "trajectory_box",
]
