"""Fixed-point computation of mean-field and symmetric N-player equilibria."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .costs import FlowMixture, build_tables, field_makers
from .measures import (
    MarginalFlow,
    ParticleMeasure,
    PathMeasure,
    TimeGrid,
    initial_atoms,
    pushforward_marginals,
    sample_initial,
)
from .model import FiniteNCoupling, ModelSpec, coupling_finite_n
from .transport import flow_distance, w1_1d, w1_lp
from .variational import (
    FeedbackGrid,
    ValueGrid,
    hjb_from_tables,
    initial_scaling,
    integrate_characteristics,
    path_costs,
    space_grid,
    transcribe_batch,
)

SCHEMES = ("picard-damped", "fictitious-play")
BACKENDS = ("transcription", "hjb-characteristics", "cross-check")
NEGATIVE_TOL = 1e-9


class InconsistencyError(RuntimeError):
    """A best response came out worse than the candidate it was started from."""


@dataclass(frozen=True)
class Discretization:
    n_t: int = 32
    n_x: int | None = None
    alpha_k: int | None = None
    particles: int = 128

    def __post_init__(self):
        if self.n_t < 1 or self.particles < 1:
            raise ValueError("n_t and particles must be positive")


@dataclass(frozen=True)
class SolverParams:
    scheme: str = "fictitious-play"
    damping: float = 0.5
    max_iters: int = 200
    eps_stop: float = 1e-6
    eps_nash: float = 1e-3
    backend: str = "transcription"
    seed: int = 0
    mc_tuples: int = 64
    budget: int = 1 << 16
    tol_br: float = 1e-8
    br_max_iter: int = 500
    field_mode: str = "auto"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not (self.eps_stop > 0 and self.eps_nash > 0 and self.tol_br > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.mc_tuples < 1 or self.budget < 1:
            raise ValueError("max_iters, mc_tuples and budget must be positive")


@dataclass(eq=False)
class EquilibriumResult:
    measure: PathMeasure
    flow: MarginalFlow
    value: ValueGrid | None
    feedback: FeedbackGrid | None
    exploitability: float
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)


@dataclass(eq=False)
class _Context:
    model: ModelSpec
    params: SolverParams
    disc: Discretization
    grid: TimeGrid
    space: object
    atoms: np.ndarray
    weights: np.ndarray
    h0: float

    def makers(self):
        if self.params.field_mode == "exact":
            return {}
        return field_makers(self.model, self.space, self.weights)


def _context(model, particles: ParticleMeasure, params, disc) -> _Context:
    grid = TimeGrid(model.horizon, disc.n_t)
    space = space_grid(model, grid, disc.n_x) if model.dim <= 2 else None
    return _Context(model, params, disc, grid, space, particles.points, particles.weights, initial_scaling(model, grid))


def _velocities(paths, dt):
    return np.diff(paths, axis=1) / dt


def _best_response(ctx: _Context, mixture: FlowMixture, extra_starts=(), backend=None):
    """Best responses of all atoms against the frozen ``mixture``."""
    p = ctx.params
    backend = backend or p.backend
    mode = p.field_mode if ctx.space is not None else "exact"
    tab = build_tables(ctx.model, mixture, ctx.space, mode)
    vg = fb = None
    info = {}
    if ctx.space is not None:
        vg, fb = hjb_from_tables(tab, ctx.space, ctx.grid, ctx.model.velocity_bound, ctx.disc.alpha_k)
        char, clamps = integrate_characteristics(ctx.atoms, fb)
        info["clamps"] = int(clamps.sum())
    else:
        char = None
    starts = ([char] if char is not None else []) + list(extra_starts)
    if not starts:
        starts = [np.repeat(ctx.atoms[:, None, :], ctx.grid.steps + 1, axis=1)]
    if backend == "hjb-characteristics" and char is not None:
        br = char
        J = path_costs(tab, br)
        info.update(br_nonconverged=0, br_max_pg=float("nan"))
    else:
        best, J, pgs, oks = None, None, None, None
        for start in starts:
            paths, _, _, pg, ok = transcribe_batch(
                tab, ctx.atoms, _velocities(start, ctx.grid.dt), ctx.model.velocity_bound, ctx.h0, p.tol_br, p.br_max_iter
            )
            Jp = path_costs(tab, paths)
            if best is None:
                best, J, pgs, oks = paths, Jp, pg, ok
            else:
                better = Jp < J
                best = np.where(better[:, None, None], paths, best)
                J = np.where(better, Jp, J)
                pgs = np.where(better, pg, pgs)
                oks = np.where(better, ok, oks)
        br = best
        info.update(br_nonconverged=int((~oks).sum()), br_max_pg=float(pgs.max()))
        if backend == "cross-check" and char is not None:
            Jc = path_costs(tab, char)
            info["cross_cost_gap"] = float(ctx.weights @ (Jc - J))
            info["cross_flow_gap"] = _sup_d1(char, br, ctx.weights)
    return tab, vg, fb, br, J, info


def _sup_d1(paths_a, paths_b, w_a, w_b=None) -> float:
    w_b = w_a if w_b is None else w_b
    out = 0.0
    for k in range(paths_a.shape[1]):
        mu = ParticleMeasure(paths_a[:, k], w_a)
        nu = ParticleMeasure(paths_b[:, k], w_b)
        out = max(out, w1_1d(mu, nu) if mu.dim == 1 else w1_lp(mu, nu)[0])
    return out


def _mixture_gap(mixture: FlowMixture, paths, weights) -> float:
    """``sup_t d1`` between a pure flow and the mixture.

    Exact in one dimension. Otherwise the cost of the coupling that pairs
    paths sharing an initial atom, an upper bound that needs no transport
    solve, so a stop on it is conservative.
    """
    n_slices = paths.shape[1]
    if mixture.atoms.shape[1] == 1:
        pts, w = mixture.union()
        return max(
            w1_1d(ParticleMeasure(paths[:, k], weights), ParticleMeasure(pts[k], w / w.sum())) for k in range(n_slices)
        )
    acc = np.zeros(n_slices)
    for lam, comp in zip(mixture.lam, mixture.components):
        acc += lam * (weights @ np.sqrt(np.sum((paths - comp) ** 2, axis=-1)))
    return float(acc.max() / sum(mixture.lam))


def certify(ctx: _Context, paths: np.ndarray):
    """Exploitability of the pure profile ``paths`` against its own marginal flow.

    Best responses start from the candidate itself and from the HJB
    characteristic; the better of the two counts.
    """
    mixture = FlowMixture.pure(ctx.grid, ctx.atoms, ctx.weights, paths, ctx.makers())
    backend = "cross-check" if ctx.params.backend != "transcription" else "transcription"
    tab, vg, fb, br, Jbr, info = _best_response(ctx, mixture, extra_starts=(paths,), backend=backend)
    Jc = path_costs(tab, paths)
    gaps = Jc - Jbr
    expl = float(ctx.weights @ gaps)
    if expl < -NEGATIVE_TOL:
        raise InconsistencyError(f"exploitability {expl:.3e} is negative: best responses worse than the candidate")
    return max(expl, 0.0), gaps, vg, fb, br, info


def _measure_free(c) -> bool:
    base = getattr(c, "base", c)
    return base.kind == "none" or base.amplitude == 0.0


def solve_equilibrium(
    model: ModelSpec,
    particles: ParticleMeasure,
    params: SolverParams = SolverParams(),
    disc: Discretization = Discretization(),
    initial_paths: np.ndarray | None = None,
    callback=None,
) -> EquilibriumResult:
    """Damped Picard or fictitious play on the marginal flow.

    Each iteration freezes the flow mixture, computes every atom's best
    response and mixes the resulting pure flow in with weight ``theta`` or
    ``1/(k+1)``. The cheap stopping test is the mixture's exploitability or
    the flow increment; a stop is accepted only once the last best response
    passes the pure exploitability certificate against its own flow.
    """
    t_start = time.perf_counter()
    ctx = _context(model, particles, params, disc)
    P = ctx.atoms.shape[0]
    if initial_paths is None:
        initial_paths = np.repeat(ctx.atoms[:, None, :], ctx.grid.steps + 1, axis=1)
    initial_paths = np.array(initial_paths, dtype=float)
    initial_paths[:, 0] = ctx.atoms
    mixture = FlowMixture.pure(ctx.grid, ctx.atoms, ctx.weights, initial_paths, ctx.makers())

    trace, deltas, certs = [], [], []
    clamps = 0
    br_bad = 0
    converged = False
    cert = None
    br = initial_paths
    # without mean-field dependence the first best response is already the equilibrium
    decoupled = _measure_free(model.running) and _measure_free(model.terminal)
    next_attempt = 0
    it = 0
    for it in range(1, params.max_iters + 1):
        tab, vg, fb, br, Jbr, info = _best_response(ctx, mixture)
        clamps += info.get("clamps", 0)
        br_bad += info.get("br_nonconverged", 0)
        comp_costs = np.array([path_costs(tab, c) for c in mixture.components])
        lam = np.array(mixture.lam)
        best = np.minimum(Jbr, comp_costs.min(axis=0))
        expl_mix = float(lam @ (comp_costs @ ctx.weights) - ctx.weights @ best)
        trace.append(expl_mix)
        w = params.damping if params.scheme == "picard-damped" else 1.0 / it
        delta = w * _mixture_gap(mixture, br, ctx.weights)
        deltas.append(delta)
        if callback is not None:
            callback(it, expl_mix, delta)
        if (decoupled or expl_mix <= params.eps_nash or delta <= params.eps_stop) and it >= next_attempt:
            cert = certify(ctx, br)
            certs.append((it, cert[0]))
            if cert[0] <= params.eps_nash:
                converged = True
                break
            next_attempt = it + max(1, it // 10)
        if it == params.max_iters:
            break
        mixture.mix(br, w, params.budget)

    if cert is None or certs[-1][0] != it:
        cert = certify(ctx, br)
        certs.append((it, cert[0]))
    expl, gaps, vg, fb, _, cinfo = cert
    measure = PathMeasure(ctx.grid, ctx.atoms, br, ctx.weights)
    diagnostics = dict(
        exploitability_trace=trace,
        flow_deltas=deltas,
        certificates=certs,
        clamp_events=clamps,
        br_nonconverged=br_bad,
        truncated_mass=mixture.truncated_mass,
        mixture_components=len(mixture.components),
        atom_gaps=gaps,
        velocity_bound=model.velocity_bound,
        box=(model.box.lo.tolist(), model.box.hi.tolist()),
        wall_time=time.perf_counter() - t_start,
    )
    for key in ("cross_cost_gap", "cross_flow_gap"):
        if key in cinfo:
            diagnostics[key] = cinfo[key]
    diagnostics["mc_error"] = mc_error(model, measure)
    return EquilibriumResult(measure, pushforward_marginals(measure), vg, fb, expl, it, converged, diagnostics)


def exploitability(
    model: ModelSpec, m: PathMeasure, flow: MarginalFlow | None = None, disc: Discretization | None = None,
    params: SolverParams = SolverParams(),
) -> float:
    """``sum_x w_x [J(gamma_x, m) - min J(., m)]`` for the pure profile ``m``."""
    if flow is not None:
        ref = pushforward_marginals(m)
        if flow.grid != m.grid or not (np.array_equal(flow.points, ref.points) and np.array_equal(flow.weights, ref.weights)):
            raise ValueError("flow must be the pushforward of m")
    disc = disc or Discretization(n_t=m.grid.steps, particles=len(m))
    if disc.n_t != m.grid.steps:
        raise ValueError("discretisation and path measure use different time grids")
    ctx = _context(model, ParticleMeasure(m.initial, m.weights), params, disc)
    return certify(ctx, m.paths)[0]


def mc_error(model: ModelSpec, m: PathMeasure) -> float:
    """Monte Carlo standard error of the finite-player couplings on the measure's own flow.

    Evaluated at the atoms on the first, middle and last slice; zero when the
    couplings are exact.
    """
    out = 0.0
    for which, c in ((0, model.running), (1, model.terminal)):
        if not isinstance(c, FiniteNCoupling):
            continue
        T = c.tuple_matrix(m.weights)
        steps = (0, m.grid.steps // 2) if which == 0 else (m.grid.steps,)
        for k in steps:
            y = m.paths[:, k]
            if c.base.kind == "mean-attraction":
                ybar = T @ y
                per = c.base.amplitude * np.sum((y[:, None, :] - ybar[None]) ** 2, axis=-1)
            else:
                code, amp, scale = c.base.kernel_code
                from .model import kernel_matrix

                K, _ = kernel_matrix(code, scale, y, y)
                per = amp * K @ T.T
            if c.M > 1:
                out = max(out, float(np.max(per.std(axis=1, ddof=1)) / math.sqrt(c.M)))
    return out


# -- entry points ---------------------------------------------------------------------


def solve_mfg(model: ModelSpec, params=SolverParams(), disc=Discretization(), **kw) -> EquilibriumResult:
    """Limit equilibrium from deterministic quadrature atoms of m_0."""
    return solve_equilibrium(model, initial_atoms(model.initial, disc.particles), params, disc, **kw)


def finite_player_model(model: ModelSpec, N: int, M: int, seed: int) -> ModelSpec:
    return model.with_couplings(
        coupling_finite_n(model.running, N, M, seed), coupling_finite_n(model.terminal, N, M, seed)
    )


def solve_mfg_n(
    model: ModelSpec, N: int, params=SolverParams(), disc=Discretization(), mode: str = "shared", **kw
) -> EquilibriumResult:
    """Symmetric N-player equilibrium driven by the averaged couplings ``f_N, g_N``.

    ``mode="shared"`` reuses the limit solve's quadrature atoms; ``"sampled"``
    draws N initial positions with the solver seed.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    model_n = finite_player_model(model, N, params.mc_tuples, params.seed)
    if mode == "shared":
        atoms = initial_atoms(model.initial, disc.particles)
    elif mode == "sampled":
        pts = sample_initial(model.initial, N, params.seed)
        atoms = ParticleMeasure(pts, np.full(N, 1.0 / N))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return solve_equilibrium(model_n, atoms, params, disc, **kw)


def solve_multistart(
    model: ModelSpec, params=SolverParams(), disc=Discretization(), starts: int = 4, particles=None
) -> list[EquilibriumResult]:
    """Solve from several initial flows and keep the distinct equilibria.

    Start ``s > 0`` moves every atom with a constant velocity drawn from the
    seed. Two results are the same equilibrium when their flows are within
    ``10 * eps_stop`` in ``sup_t d1``.
    """
    atoms = particles or initial_atoms(model.initial, disc.particles)
    grid = TimeGrid(model.horizon, disc.n_t)
    found: list[EquilibriumResult] = []
    for s in range(starts):
        paths = np.repeat(atoms.points[:, None, :], grid.steps + 1, axis=1)
        if s:
            rng = np.random.default_rng([params.seed, s])
            v = rng.uniform(-0.5, 0.5, model.dim) * model.velocity_bound
            paths = paths + grid.nodes[None, :, None] * v[None, None, :]
        res = solve_equilibrium(model, atoms, replace(params, seed=params.seed + s), disc, initial_paths=paths)
        res.diagnostics["start"] = s
        if all(flow_distance(res.flow, r.flow)[0] > 10 * params.eps_stop for r in found):
            found.append(res)
    return found


# -- statistical checks ---------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Bounded path functional ``psi(gamma) = phi(gamma(t_k))``."""

    name: str
    kind: str  # "constant", "clamped-linear" or "gaussian"
    step: int
    center: np.ndarray
    scale: float
    direction: np.ndarray | None = None

    __test__ = False  # not a pytest class

    def __call__(self, positions: np.ndarray) -> np.ndarray:
        x = positions[:, self.step]
        if self.kind == "constant":
            return np.ones(x.shape[0])
        if self.kind == "clamped-linear":
            return np.clip((x - self.center) @ self.direction / self.scale, -1.0, 1.0)
        if self.kind == "gaussian":
            return np.exp(-np.sum((x - self.center) ** 2, axis=-1) / (2.0 * self.scale**2))
        raise ValueError(f"unknown test function kind {self.kind!r}")


def default_test_family(m: PathMeasure) -> list[TestFunction]:
    """Constant, clamped-linear and Gaussian-bump functionals at t = 0, T/2, T."""
    fam = []
    n = m.grid.steps
    d = m.dim
    e1 = np.eye(d)[0]
    fam.append(TestFunction("const", "constant", 0, np.zeros(d), 1.0))
    for k in sorted({0, n // 2, n}):
        x = m.paths[:, k]
        c = m.weights @ x
        s = float(np.sqrt(m.weights @ np.sum((x - c) ** 2, axis=-1))) or 1.0
        fam.append(TestFunction(f"lin_t{k}", "clamped-linear", k, c, s, e1))
        fam.append(TestFunction(f"bump_t{k}", "gaussian", k, c, s))
    return fam


def lln_variance_check(m: PathMeasure, family, N: int, reps: int, seed: int) -> list[dict]:
    """Empirical variance of the opponents' average of each ``psi`` around its mean.

    Draws ``reps`` tuples of ``N - 1`` paths from ``m`` by atom weight with a
    counter-based stream keyed on ``(seed, N)``. Values are shifted by the
    first atom's value first, so a constant functional gives exactly zero.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, N])))
    cw = np.cumsum(m.weights)
    idx = np.minimum(np.searchsorted(cw, rng.random((reps, N - 1)) * cw[-1], side="right"), len(m) - 1)
    rows = []
    for psi in family:
        vals = psi(m.paths)
        phi = vals - vals[0]
        mean = float(m.weights @ phi)
        var = float(m.weights @ (phi - mean) ** 2)
        S = phi[idx].mean(axis=1)
        v_hat = float(np.mean((S - mean) ** 2))
        rows.append(dict(psi=psi.name, N=N, v_hat=v_hat, scaled=v_hat * (N - 1), oracle=var / (N - 1)))
    return rows


@dataclass(frozen=True)
class DensityReport:
    max_norm: float
    norms: np.ndarray
    initial_norm: float
    ratio: float


def density_lp_check(flow: MarginalFlow, p: float, bins: int, box=None) -> DensityReport:
    """Histogram densities per slice and their discrete L^p norms (``p`` = 2 or inf)."""
    if p not in (2, 2.0, math.inf):
        raise ValueError("p must be 2 or inf")
    d = flow.dim
    if box is None:
        lo = flow.points.reshape(-1, d).min(axis=0)
        hi = flow.points.reshape(-1, d).max(axis=0)
    else:
        lo, hi = box.lo, box.hi
    hi = np.where(hi > lo, hi, lo + 1.0)
    edges = [np.linspace(lo[i], hi[i], bins + 1) for i in range(d)]
    vol = float(np.prod((hi - lo) / bins))
    norms = np.empty(flow.grid.steps + 1)
    for k in range(flow.grid.steps + 1):
        H, _ = np.histogramdd(flow.points[k], bins=edges, weights=flow.weights[k])
        rho = H / vol
        norms[k] = rho.max() if p == math.inf else float(np.sqrt(np.sum(rho**2) * vol))
    return DensityReport(float(norms.max()), norms, float(norms[0]), float(norms.max() / norms[0]))


def check_invariants(result: EquilibriumResult, model: ModelSpec, atoms: ParticleMeasure | None = None) -> dict:
    """Weight sums, initial condition, velocity bound and box containment of a solver output."""
    m = result.measure
    v = np.diff(m.paths, axis=1) / m.grid.dt
    speed = np.sqrt(np.sum(v * v, axis=-1))
    C = model.velocity_bound
    flow_ok = np.array_equal(result.flow.points, pushforward_marginals(m).points)
    out = dict(
        weights=bool(abs(m.weights.sum() - 1.0) <= 1e-12 and np.all(np.abs(result.flow.weights.sum(axis=1) - 1.0) <= 1e-12)),
        initial=bool(np.array_equal(m.paths[:, 0], m.initial) and np.array_equal(result.flow.points[0], m.initial)),
        velocity=bool(speed.max(initial=0.0) <= C * (1.0 + 1e-9) + 1e-12),
        box=bool(np.all(model.box.contains(m.paths.reshape(-1, m.dim), tol=1e-9 * (1.0 + C)))),
        flow=bool(flow_ok),
    )
    if atoms is not None:
        out["initial"] = out["initial"] and bool(np.array_equal(m.initial, atoms.points))
    out["all"] = all(out.values())
    return out


__all__ = [
    "Discretization",
    "SolverParams",
    "EquilibriumResult",
    "InconsistencyError",
    "solve_equilibrium",
    "solve_mfg",
    "solve_mfg_n",
    "finite_player_model",
    "solve_multistart",
    "exploitability",
    "certify",
    "mc_error",
    "TestFunction",
    "default_test_family",
    "lln_variance_check",
    "DensityReport",
    "density_lp_check",
    "check_invariants",
]
