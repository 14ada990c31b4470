"""Turn a model and a (mixture of) marginal flows into kernel cost tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .expressions import pack
from .grids import SpaceGrid
from .kernels import (
    KERNEL_DISTANCE,
    KERNEL_GAUSSIAN,
    KERNEL_QUADRATIC,
    MODE_EXACT,
    MODE_FIELD,
    MODE_NONE,
    CostTables,
    make_tables,
)
from .measures import MarginalFlow, TimeGrid
from .model import FiniteNCoupling, ModelSpec

EXACT_CAP = 1024


def _base(c):
    return c.base if isinstance(c, FiniteNCoupling) else c


def field_capable(c, dim: int) -> bool:
    code = _base(c).kernel_code[0]
    return code == KERNEL_GAUSSIAN and dim <= 2 and _base(c).amplitude != 0.0


def interaction_weights(c, atom_weights: np.ndarray) -> np.ndarray:
    """Per-atom weights of a kernel interaction: the atom weights, or frozen draw frequencies."""
    if isinstance(c, FiniteNCoupling):
        counts = c.draw_counts(atom_weights)
        return counts / counts.sum()
    return atom_weights


class FieldMaker:
    """Kernel interaction of one mixture component sampled on the space grid."""

    def __init__(self, coupling, space: SpaceGrid, atom_weights: np.ndarray, terminal: bool):
        code, amp, scale = _base(coupling).kernel_code
        self.amp = amp
        self.scale = scale
        self.space = space
        self.terminal = terminal
        self.weights = np.ascontiguousarray(interaction_weights(coupling, atom_weights))

    def __call__(self, paths: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(paths.transpose(1, 0, 2))
        if self.terminal:
            pts = pts[-1:]
        out = np.empty((pts.shape[0], self.space.size, kernels.field_components(self.space.dim)))
        kernels.kernel("build_field")(self.amp, self.scale, pts, self.weights, *self.space.arrays(), out)
        return out[0] if self.terminal else out


@dataclass(eq=False)
class FlowMixture:
    """Convex combination of pure flows that share one set of initial atoms.

    ``components[c]`` holds one path per atom, ``lam[c]`` its mixture weight.
    The interaction fields of the running and terminal couplings are kept
    up to date as components are mixed in, so no per-component fields are stored.
    """

    grid: TimeGrid
    atoms: np.ndarray
    atom_weights: np.ndarray
    components: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    makers: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    truncated_mass: float = 0.0

    @classmethod
    def pure(cls, grid, atoms, atom_weights, paths, makers=None) -> FlowMixture:
        mix = cls(grid, np.asarray(atoms, dtype=float), np.asarray(atom_weights, dtype=float), makers=dict(makers or {}))
        mix.components = [np.ascontiguousarray(paths, dtype=float)]
        mix.lam = [1.0]
        mix.fields = {key: mk(mix.components[0]) for key, mk in mix.makers.items()}
        return mix

    @classmethod
    def from_flow(cls, flow: MarginalFlow, makers=None) -> FlowMixture:
        w = flow.weights
        if not np.all(w == w[0]):
            raise ValueError("cost tables need flows whose particle weights are constant in time")
        paths = np.ascontiguousarray(flow.points.transpose(1, 0, 2))
        return cls.pure(flow.grid, paths[:, 0, :], w[0], paths, makers)

    @property
    def size(self) -> int:
        return len(self.components) * self.atoms.shape[0]

    def mix(self, paths: np.ndarray, w: float, budget: int | None = None) -> None:
        """``self <- (1 - w) self + w (pure flow of paths)``, then enforce the particle budget."""
        paths = np.ascontiguousarray(paths, dtype=float)
        self.lam = [(1.0 - w) * l for l in self.lam]
        for key, mk in self.makers.items():
            self.fields[key] = (1.0 - w) * self.fields[key] + w * mk(paths)
        for c, comp in enumerate(self.components):
            if np.array_equal(comp, paths):
                self.lam[c] += w
                break
        else:
            self.components.append(paths)
            self.lam.append(w)
        # drop components whose weight has underflowed to zero
        keep = [c for c, l in enumerate(self.lam) if l > 0.0]
        if len(keep) < len(self.lam):
            self.components = [self.components[c] for c in keep]
            self.lam = [self.lam[c] for c in keep]
        if budget is not None:
            self._truncate(budget)

    def _truncate(self, budget: int) -> None:
        P = self.atoms.shape[0]
        max_comp = max(1, budget // P)
        if len(self.components) <= max_comp:
            return
        # smallest weights go first, older components before newer ones on ties
        order = sorted(range(len(self.lam)), key=lambda c: (self.lam[c], c))
        drop = set(order[: len(self.lam) - max_comp])
        self.truncated_mass += sum(self.lam[c] for c in drop) * (1.0 - self.truncated_mass)
        self.components = [comp for c, comp in enumerate(self.components) if c not in drop]
        lam = np.array([l for c, l in enumerate(self.lam) if c not in drop])
        self.lam = list(lam / lam.sum())
        self.refresh_fields()

    def refresh_fields(self) -> None:
        for key, mk in self.makers.items():
            acc = None
            for l, comp in zip(self.lam, self.components):
                f = l * mk(comp)
                acc = f if acc is None else acc + f
            self.fields[key] = acc

    def union(self) -> tuple[np.ndarray, np.ndarray]:
        """Slices ``(n_t + 1, C * P, d)`` and weights ``(C * P,)`` of the mixture as one particle cloud."""
        pts = np.concatenate([c.transpose(1, 0, 2) for c in self.components], axis=1)
        w = np.concatenate([l * self.atom_weights for l in self.lam])
        return np.ascontiguousarray(pts), w

    def union_weights(self, atom_w: np.ndarray) -> np.ndarray:
        return np.concatenate([l * atom_w for l in self.lam])

    def atom_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-atom mixture mean ``(n_t + 1, P, d)`` and variance ``(n_t + 1, P)``."""
        mean = None
        sq = None
        for l, comp in zip(self.lam, self.components):
            c = comp.transpose(1, 0, 2)
            m = l * c
            s = l * np.sum(c * c, axis=-1)
            mean = m if mean is None else mean + m
            sq = s if sq is None else sq + s
        var = np.maximum(sq - np.sum(mean * mean, axis=-1), 0.0)
        return mean, var

    def flow(self) -> MarginalFlow:
        pts, w = self.union()
        return MarginalFlow(self.grid, pts, w / w.sum())


def field_makers(model: ModelSpec, space: SpaceGrid | None, atom_weights: np.ndarray) -> dict:
    makers = {}
    if space is None:
        return makers
    if field_capable(model.running, model.dim):
        makers["run"] = FieldMaker(model.running, space, atom_weights, terminal=False)
    if field_capable(model.terminal, model.dim):
        makers["term"] = FieldMaker(model.terminal, space, atom_weights, terminal=True)
    return makers


def _moments(coupling, mixture: FlowMixture, slices: slice) -> np.ndarray:
    """``[q, c, l...]`` rows for quadratic-in-x parts of the interaction."""
    base = _base(coupling)
    d = mixture.atoms.shape[1]
    n_slices = mixture.grid.steps + 1
    rows = np.zeros((n_slices, d + 2))
    code = base.kernel_code[0]
    if base.kind == "mean-attraction":
        amp = base.amplitude
        mean_a, var_a = mixture.atom_moments()
        if isinstance(coupling, FiniteNCoupling):
            T = coupling.tuple_matrix(mixture.atom_weights)
            ybar = np.einsum("mp,spd->smd", T, mean_a)
            var_m = np.einsum("mp,sp->sm", T, var_a) / (coupling.N - 1)
            rows[:, 0] = amp
            rows[:, 1] = amp * np.mean(np.sum(ybar * ybar, axis=-1) + var_m, axis=1)
            rows[:, 2:] = -2.0 * amp * ybar.mean(axis=1)
        else:
            w = mixture.atom_weights
            m = np.einsum("p,spd->sd", w, mean_a)
            rows[:, 0] = amp
            rows[:, 1] = amp * np.sum(m * m, axis=-1)
            rows[:, 2:] = -2.0 * amp * m
    elif base.kind == "linear-integral" and code == KERNEL_QUADRATIC:
        amp = base.amplitude
        pts, w = mixture.union()
        m = np.einsum("u,sud->sd", w, pts)
        rows[:, 0] = amp
        rows[:, 1] = amp * np.einsum("u,su->s", w, np.sum(pts * pts, axis=-1))
        rows[:, 2:] = -2.0 * amp * m
    return rows[slices]


def build_tables(
    model: ModelSpec,
    mixture: FlowMixture,
    space: SpaceGrid | None = None,
    mode: str = "auto",
    exact_cap: int = EXACT_CAP,
) -> CostTables:
    """Cost tables for the frozen flow ``mixture`` under ``model``'s couplings.

    ``mode`` is ``"exact"`` (direct kernel sums), ``"field"`` (Hermite field on
    ``space``) or ``"auto"`` (exact up to ``exact_cap`` particles per slice).
    """
    if model.lagrangian.kind != "quadratic":
        raise NotImplementedError("the solvers support quadratic Lagrangians b1|a|^2 + b2 only")
    if mode not in ("auto", "exact", "field"):
        raise ValueError(f"unknown mode {mode!r}")
    grid = mixture.grid
    d = model.dim
    exprs = [model.lagrangian.b1, model.lagrangian.b2, _base(model.running).potential, _base(model.terminal).potential]
    run_mom = _moments(model.running, mixture, slice(None))
    term_mom = _moments(model.terminal, mixture, slice(-1, None))[0]

    pts, w = None, None
    parts = {}
    for key, c in (("run", model.running), ("term", model.terminal)):
        code, amp, scale = _base(c).kernel_code
        if code in (KERNEL_GAUSSIAN, KERNEL_DISTANCE) and amp != 0.0:
            use_field = key in mixture.makers and (mode == "field" or (mode == "auto" and mixture.size > exact_cap))
            if mode == "field" and key not in mixture.makers:
                raise ValueError("field mode needs a space grid and a smooth kernel in at most two dimensions")
            if use_field:
                parts[key] = ((MODE_FIELD, code, amp, scale), None)
            else:
                if pts is None:
                    pts, _ = mixture.union()
                weights = mixture.union_weights(interaction_weights(c, mixture.atom_weights))
                parts[key] = ((MODE_EXACT, code, amp, scale), weights)
        else:
            parts[key] = ((MODE_NONE, 0, 0.0, 1.0), None)
    grid_arrays = space.arrays() if space is not None else None
    return make_tables(
        grid.dt,
        pack(exprs),
        run_mom,
        term_mom,
        run=parts["run"][0],
        term=parts["term"][0],
        pts=pts,
        run_w=parts["run"][1],
        term_w=parts["term"][1],
        grid=grid_arrays,
        run_field=mixture.fields.get("run") if parts["run"][0][0] == MODE_FIELD else None,
        term_field=mixture.fields.get("term") if parts["term"][0][0] == MODE_FIELD else None,
    )


def tables_for_flow(model: ModelSpec, flow: MarginalFlow, space: SpaceGrid | None = None, mode: str = "auto") -> CostTables:
    makers = field_makers(model, space, flow.weights[0]) if mode != "exact" else {}
    return build_tables(model, FlowMixture.from_flow(flow, makers), space, mode)


def coupling_on(tab: CostTables, which: int, k: int, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the tabulated running (``which=0``) or terminal (``which=1``) coupling at points ``X``."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    val = np.empty(X.shape[0])
    grad = np.empty_like(X)
    kernels.kernel("coupling_batch")(tab, which, k, X, val, grad)
    return val, grad


__all__ = [
    "FlowMixture",
    "FieldMaker",
    "build_tables",
    "tables_for_flow",
    "field_makers",
    "coupling_on",
]
