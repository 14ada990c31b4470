"""Running and terminal costs, Hamiltonians and mean-field couplings."""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace

import numpy as np

from .expressions import Expr
from .measures import Box, InitialLaw, MarginalFlow, ParticleMeasure, Trajectory, trajectory_box, velocities

VELOCITY_SAFETY = 1.5


class HamiltonianConvergenceError(ArithmeticError):
    def __init__(self, message: str, xi, x, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations at xi={xi}, x={x})")
        self.xi = xi
        self.x = x
        self.residual = residual
        self.iterations = iterations


# -- Lagrangians ----------------------------------------------------------------------


@dataclass(frozen=True)
class LagrangianBounds:
    """Quadratic sandwich ``lower|a|^2 - c_below <= L <= upper|a|^2 + c_above`` on a box."""

    lower: float
    upper: float
    c_below: float
    c_above: float
    convexity: float


@dataclass(frozen=True, eq=False)
class LagrangianSpec:
    """``L(alpha, x)``: either ``b1(x)|alpha|^2 + b2(x)`` or user callables.

    Custom callables receive one velocity ``alpha`` of shape ``(d,)`` and one
    state ``x`` of shape ``(d,)``.
    """

    kind: str
    dim: int
    b1: Expr | None = None
    b2: Expr | None = None
    fn: Callable | None = None
    fn_grad: Callable | None = None
    fn_hess: Callable | None = None
    fn_grad_x: Callable | None = None

    def __post_init__(self):
        if self.kind == "quadratic":
            if self.b1 is None or self.b2 is None:
                raise ValueError("quadratic Lagrangian needs b1 and b2")
        elif self.kind == "custom":
            if self.fn is None or self.fn_grad is None or self.fn_hess is None:
                raise ValueError("custom Lagrangian needs value, gradient and Hessian callables")
        else:
            raise ValueError(f"unknown Lagrangian kind {self.kind!r}")

    @classmethod
    def quadratic(cls, b1, b2=0.0, dim: int = 1) -> LagrangianSpec:
        b1 = b1 if isinstance(b1, Expr) else Expr.parse(b1, dim)
        b2 = b2 if isinstance(b2, Expr) else Expr.parse(b2, dim)
        return cls("quadratic", b1.dim, b1=b1, b2=b2)

    @classmethod
    def custom(cls, dim, value, grad_alpha, hess_alpha, grad_x=None) -> LagrangianSpec:
        return cls("custom", dim, fn=value, fn_grad=grad_alpha, fn_hess=hess_alpha, fn_grad_x=grad_x)

    def value(self, alpha, x):
        alpha = np.asarray(alpha, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.kind == "quadratic":
            return self.b1(x) * np.sum(alpha * alpha, axis=-1) + self.b2(x)
        return _apply(self.fn, alpha, x, ())

    def grad_alpha(self, alpha, x):
        alpha = np.asarray(alpha, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.kind == "quadratic":
            return 2.0 * np.asarray(self.b1(x))[..., None] * alpha
        return _apply(self.fn_grad, alpha, x, (self.dim,))

    def hess_alpha(self, alpha, x):
        alpha = np.asarray(alpha, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.kind == "quadratic":
            b1 = np.asarray(self.b1(x))
            shape = np.broadcast_shapes(alpha.shape[:-1], b1.shape)
            return 2.0 * b1[..., None, None] * np.broadcast_to(np.eye(self.dim), shape + (self.dim, self.dim))
        return _apply(self.fn_hess, alpha, x, (self.dim, self.dim))

    def grad_x(self, alpha, x):
        alpha = np.asarray(alpha, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.kind == "quadratic":
            a2 = np.sum(alpha * alpha, axis=-1)
            return self.b1.grad(x) * a2[..., None] + self.b2.grad(x)
        if self.fn_grad_x is not None:
            return _apply(self.fn_grad_x, alpha, x, (self.dim,))
        h = 1e-6
        out = []
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            out.append((self.value(alpha, x + e) - self.value(alpha, x - e)) / (2 * h))
        return np.stack(out, axis=-1)

    def bounds(self, box: Box, radius: float = 4.0, samples: int = 9) -> LagrangianBounds:
        if self.kind == "quadratic":
            b1_lo, b1_hi = self.b1.bounds(box.lo, box.hi)
            b2_lo, b2_hi = self.b2.bounds(box.lo, box.hi)
            if b1_lo <= 0:
                raise ValueError(f"b1 must be positive on the trajectory box (min {b1_lo})")
            return LagrangianBounds(b1_lo, b1_hi, max(0.0, -b2_lo), max(0.0, b2_hi), 2.0 * b1_lo)
        # strong convexity constants from Hessian spot checks, then Young's inequality
        xs = _box_samples(box, samples)
        axes = [np.linspace(-radius, radius, samples)] * self.dim
        alphas = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        c_lo, c_hi = np.inf, 0.0
        l0_lo, l0_hi, g0 = np.inf, -np.inf, 0.0
        for x in xs:
            for a in alphas:
                eig = np.linalg.eigvalsh(self.hess_alpha(a, x))
                c_lo, c_hi = min(c_lo, eig[0]), max(c_hi, eig[-1])
            l0 = float(self.value(np.zeros(self.dim), x))
            l0_lo, l0_hi = min(l0_lo, l0), max(l0_hi, l0)
            g0 = max(g0, float(np.linalg.norm(self.grad_alpha(np.zeros(self.dim), x))))
        if c_lo <= 0:
            raise ValueError("custom Lagrangian is not strictly convex in the velocity on the probe grid")
        return LagrangianBounds(
            lower=c_lo / 4.0,
            upper=c_hi,
            c_below=max(0.0, -(l0_lo - g0 * g0 / c_lo)),
            c_above=max(0.0, l0_hi + g0 * g0 / (2.0 * c_hi)),
            convexity=c_lo,
        )


def _apply(fn, alpha, x, out_shape):
    lead = np.broadcast_shapes(alpha.shape[:-1], x.shape[:-1])
    a = np.broadcast_to(alpha, lead + alpha.shape[-1:]).reshape(-1, alpha.shape[-1])
    xx = np.broadcast_to(x, lead + x.shape[-1:]).reshape(-1, x.shape[-1])
    out = np.array([fn(ai, xi) for ai, xi in zip(a, xx)], dtype=float)
    return out.reshape(lead + out_shape)


def _box_samples(box: Box, samples: int) -> np.ndarray:
    axes = [np.linspace(a, b, samples if b > a else 1) for a, b in zip(box.lo, box.hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)


# -- convex conjugates ----------------------------------------------------------------


def legendre_newton(fun, grad, hess, y, z0, tol: float = 1e-12, max_iter: int = 100):
    """Maximise ``y.z - fun(z)`` by damped Newton; returns ``(value, argmax, residual, iters)``.

    ``fun`` must be strictly convex. The residual is ``|grad(z) - y|``.
    """
    y = np.asarray(y, dtype=float)
    z = np.array(z0, dtype=float)
    obj = float(y @ z - fun(z))
    for it in range(max_iter):
        r = grad(z) - y
        res = float(np.linalg.norm(r))
        if res <= tol:
            return obj, z, res, it
        step = np.linalg.solve(hess(z), r)
        t = 1.0
        while t > 1e-12:
            zt = z - t * step
            ot = float(y @ zt - fun(zt))
            if ot >= obj - 1e-14 * (1.0 + abs(obj)):
                break
            t *= 0.5
        z, obj = zt, ot
    r = grad(z) - y
    return obj, z, float(np.linalg.norm(r)), max_iter


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """``H(xi, x) = sup_a {xi.a - L(a, x)}``.

    ``method="closed-form"`` is available for quadratic Lagrangians; ``"newton"``
    solves the first-order condition ``grad_a L(a, x) = xi`` numerically.
    """

    lagrangian: LagrangianSpec
    method: str = "auto"
    tol: float = 1e-12
    max_iter: int = 100

    def __post_init__(self):
        method = self.method
        if method == "auto":
            method = "closed-form" if self.lagrangian.kind == "quadratic" else "newton"
        if method == "closed-form" and self.lagrangian.kind != "quadratic":
            raise ValueError("closed-form Hamiltonian needs a quadratic Lagrangian")
        if method not in ("closed-form", "newton"):
            raise ValueError(f"unknown method {method!r}")
        object.__setattr__(self, "method", method)

    def _solve(self, xi, x):
        L = self.lagrangian
        xi = np.asarray(xi, dtype=float)
        x = np.asarray(x, dtype=float)
        lead = np.broadcast_shapes(xi.shape[:-1], x.shape[:-1])
        XI = np.broadcast_to(xi, lead + xi.shape[-1:]).reshape(-1, L.dim)
        X = np.broadcast_to(x, lead + x.shape[-1:]).reshape(-1, L.dim)
        vals = np.empty(XI.shape[0])
        args = np.empty_like(XI)
        for i, (q, p) in enumerate(zip(XI, X)):
            val, a, res, it = legendre_newton(
                lambda a: float(L.value(a, p)),
                lambda a: L.grad_alpha(a, p),
                lambda a: L.hess_alpha(a, p),
                q,
                np.zeros(L.dim),
                tol=self.tol,
                max_iter=self.max_iter,
            )
            if res > self.tol:
                raise HamiltonianConvergenceError("Newton conjugate did not converge", q, p, res, it)
            vals[i] = val
            args[i] = a
        return vals.reshape(lead), args.reshape(lead + (L.dim,))

    def value(self, xi, x):
        if self.method == "closed-form":
            L = self.lagrangian
            xi = np.asarray(xi, dtype=float)
            return np.sum(xi * xi, axis=-1) / (4.0 * L.b1(x)) - L.b2(x)
        return self._solve(xi, x)[0]

    def grad(self, xi, x):
        if self.method == "closed-form":
            xi = np.asarray(xi, dtype=float)
            return xi / (2.0 * np.asarray(self.lagrangian.b1(x))[..., None])
        return self._solve(xi, x)[1]

    def constants(self, box: Box) -> dict[str, float]:
        """``H_lower, H_upper, C_H`` of the quadratic sandwich and ``c_H`` of the gradient growth bound."""
        b = self.lagrangian.bounds(box)
        c_h = max(1.0, math.sqrt(b.lower * (b.c_above + b.c_below))) / b.lower
        return dict(
            H_lower=1.0 / (4.0 * b.upper),
            H_upper=1.0 / (4.0 * b.lower),
            C_H=max(b.c_above, b.c_below),
            c_H=c_h,
        )


# -- couplings ------------------------------------------------------------------------

COUPLING_KINDS = ("none", "linear-integral", "kde-congestion", "mean-attraction")
KERNELS = ("gaussian", "distance", "quadratic")


@dataclass(frozen=True, eq=False)
class CouplingSpec:
    """Mean-field coupling ``h(x, mu) = potential(x) + interaction(x, mu)``.

    * ``linear-integral``: ``amplitude * sum_i w_i phi(x, y_i)`` with ``phi`` from
      :data:`KERNELS` (``gaussian`` uses ``kernel_scale`` as bandwidth).
    * ``kde-congestion``: ``amplitude * sum_i w_i exp(-|x - y_i|^2 / (2 bandwidth^2))``.
    * ``mean-attraction``: ``amplitude * |x - mean(mu)|^2``.
    """

    kind: str
    dim: int
    amplitude: float = 0.0
    bandwidth: float = 1.0
    kernel: str = "gaussian"
    kernel_scale: float = 1.0
    potential: Expr | None = None
    monotone: bool = False

    def __post_init__(self):
        if self.kind not in COUPLING_KINDS:
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        if self.kind == "kde-congestion" and not self.bandwidth > 0:
            raise ValueError("kde bandwidth must be positive")
        if self.kind == "linear-integral" and self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.potential is None:
            object.__setattr__(self, "potential", Expr.constant(0.0, self.dim))

    # kernel code shared with the compiled kernels: 0 none, 1 gaussian, 2 distance, 3 quadratic
    @property
    def kernel_code(self) -> tuple[int, float, float]:
        if self.kind == "kde-congestion":
            return 1, self.amplitude, self.bandwidth
        if self.kind == "linear-integral":
            return 1 + KERNELS.index(self.kernel), self.amplitude, self.kernel_scale
        return 0, 0.0, 1.0

    @property
    def is_linear(self) -> bool:
        return self.kind in ("none", "linear-integral", "kde-congestion")

    def evaluate(self, x, mu: ParticleMeasure) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        val = self.potential(x)
        if self.kind == "mean-attraction":
            m = mu.weights @ mu.points
            return val + self.amplitude * np.sum((x - m) ** 2, axis=-1)
        code, amp, scale = self.kernel_code
        if code:
            k, _ = kernel_matrix(code, scale, x, mu.points)
            val = val + amp * (k @ mu.weights)
        return val

    def gradient(self, x, mu: ParticleMeasure) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = self.potential.grad(x)
        if self.kind == "mean-attraction":
            m = mu.weights @ mu.points
            return g + 2.0 * self.amplitude * (x - m)
        code, amp, scale = self.kernel_code
        if code:
            _, dk = kernel_matrix(code, scale, x, mu.points)
            g = g + amp * np.einsum("qpd,p->qd", dk, mu.weights)
        return g

    def bounds(self, xbox: Box, mbox: Box) -> tuple[float, float]:
        """Range over ``x`` in ``xbox`` and measures supported in ``mbox``."""
        lo, hi = self.potential.bounds(xbox.lo, xbox.hi)
        code, amp, scale = self.kernel_code
        if self.kind == "mean-attraction" or code == 3:
            near = np.maximum(0.0, np.maximum(xbox.lo - mbox.hi, mbox.lo - xbox.hi))
            far = np.maximum(np.abs(xbox.hi - mbox.lo), np.abs(mbox.hi - xbox.lo))
            k_lo, k_hi = float(near @ near), float(far @ far)
        elif code == 2:
            near = np.maximum(0.0, np.maximum(xbox.lo - mbox.hi, mbox.lo - xbox.hi))
            far = np.maximum(np.abs(xbox.hi - mbox.lo), np.abs(mbox.hi - xbox.lo))
            k_lo, k_hi = float(np.linalg.norm(near)), float(np.linalg.norm(far))
        elif code == 1:
            k_lo, k_hi = 0.0, 1.0
        else:
            return lo, hi
        amp = self.amplitude
        return lo + min(amp * k_lo, amp * k_hi), hi + max(amp * k_lo, amp * k_hi)

    def c2_bound(self, box: Box) -> float:
        """Bound on ``|h| + sum|dh| + sum|d2h|`` over ``box`` (inf for non-smooth kernels)."""
        pts = _box_samples(box, 33 if box.dim == 1 else 9)
        pot = self.potential
        c = float(np.max(np.abs(pot(pts)) + np.abs(pot.grad(pts)).sum(-1) + np.abs(pot.hess(pts)).sum((-1, -2))))
        d = self.dim
        a = abs(self.amplitude)
        code, _, scale = self.kernel_code
        diam = float(np.linalg.norm(box.hi - box.lo))
        if code == 1:
            c += a * (1.0 + d / (scale * math.sqrt(math.e)) + d * d / scale**2)
        elif code == 2:
            return math.inf
        elif code == 3 or self.kind == "mean-attraction":
            c += a * (diam**2 + 2.0 * d * diam + 2.0 * d)
        return c


def kernel_matrix(code: int, scale: float, x: np.ndarray, y: np.ndarray):
    """Kernel values ``(Q, P)`` and x-gradients ``(Q, P, d)`` between query points and atoms."""
    diff = x[:, None, :] - y[None, :, :]
    r2 = np.sum(diff * diff, axis=-1)
    if code == 1:
        k = np.exp(-r2 / (2.0 * scale * scale))
        return k, -diff * (k / (scale * scale))[..., None]
    if code == 2:
        r = np.sqrt(r2)
        safe = np.where(r > 0, r, 1.0)
        return r, np.where((r > 0)[..., None], diff / safe[..., None], 0.0)
    return r2, 2.0 * diff


@dataclass(frozen=True, eq=False)
class FiniteNCoupling:
    """``h_N(x, mu)``: ``h`` averaged over ``M`` frozen tuples of ``N - 1`` draws from ``mu``.

    The uniforms behind the draws are fixed when the wrapper is built, and each
    evaluation maps them through the inverse CDF of the atom weights of ``mu``
    (common random numbers). For the kde kind the tuple average collapses to a
    reweighting of the atoms by their draw counts, which is exact because the
    interaction is linear in ``mu``.
    """

    base: CouplingSpec
    N: int
    M: int
    seed: int
    uniforms: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.N < 2 or self.M < 1:
            raise ValueError("need N >= 2 and M >= 1")
        if self.uniforms is None:
            rng = np.random.default_rng([self.seed, self.N, self.M])
            object.__setattr__(self, "uniforms", rng.random((self.M, self.N - 1)))

    # forward the static description of the base coupling
    def __getattr__(self, name):
        if name in ("kind", "dim", "amplitude", "bandwidth", "kernel", "kernel_scale", "potential", "monotone",
                    "kernel_code", "is_linear", "bounds", "c2_bound"):
            return getattr(self.base, name)
        raise AttributeError(name)

    def draw_indices(self, weights: np.ndarray) -> np.ndarray:
        cw = np.cumsum(weights)
        idx = np.searchsorted(cw, self.uniforms * cw[-1], side="right")
        return np.minimum(idx, weights.size - 1)

    def draw_counts(self, weights: np.ndarray) -> np.ndarray:
        idx = self.draw_indices(weights)
        return np.bincount(idx.ravel(), minlength=weights.size)

    def tuple_matrix(self, weights: np.ndarray) -> np.ndarray:
        """``(M, P)`` matrix whose rows average the atoms drawn into each tuple."""
        idx = self.draw_indices(weights)
        t = np.zeros((self.M, weights.size))
        for m in range(self.M):
            t[m] = np.bincount(idx[m], minlength=weights.size)
        return t / (self.N - 1)

    def reweighted(self, mu: ParticleMeasure) -> ParticleMeasure:
        counts = self.draw_counts(mu.weights)
        return ParticleMeasure(mu.points, counts / counts.sum())

    def evaluate(self, x, mu: ParticleMeasure) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.base.kind == "mean-attraction":
            means = self.tuple_matrix(mu.weights) @ mu.points
            d2 = np.sum((x[:, None, :] - means[None]) ** 2, axis=-1)
            return self.base.potential(x) + self.base.amplitude * d2.mean(axis=1)
        return self.base.evaluate(x, self.reweighted(mu))

    def gradient(self, x, mu: ParticleMeasure) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.base.kind == "mean-attraction":
            means = self.tuple_matrix(mu.weights) @ mu.points
            return self.base.potential.grad(x) + 2.0 * self.base.amplitude * (x - means.mean(axis=0))
        return self.base.gradient(x, self.reweighted(mu))


Coupling = CouplingSpec | FiniteNCoupling


def coupling_eval(c: Coupling, x, mu: ParticleMeasure) -> np.ndarray:
    """``h(x, mu)`` for one point (scalar result) or a batch of points."""
    x = np.asarray(x, dtype=float)
    out = c.evaluate(np.atleast_2d(x) if x.ndim else x.reshape(1, 1), mu)
    return float(out[0]) if x.ndim <= 1 else out


def coupling_finite_n(c: CouplingSpec, N: int, M: int = 64, seed: int = 0) -> Coupling:
    """Finite-player coupling ``h_N``; linear-integral and potential-only couplings are returned unchanged."""
    if N < 2 or M < 1:
        raise ValueError("need N >= 2 and M >= 1")
    if c.kind in ("none", "linear-integral"):
        return c
    return FiniteNCoupling(c, N, M, seed)


def monotonicity_probe(c: Coupling, box: Box, seed: int = 0, trials: int = 200, atoms: int = 4) -> dict:
    """Minimum of the Lasry-Lions pairing over random pairs of particle measures in ``box``.

    Half of the trials use single-atom measures, which is where the pairing of
    attraction-type couplings is most negative.
    """
    rng = np.random.default_rng(seed)
    worst = math.inf
    for t in range(trials):
        n = 1 if t % 2 else atoms
        mu = ParticleMeasure(rng.uniform(box.lo, box.hi, (n, box.dim)), rng.dirichlet(np.ones(n)))
        nu = ParticleMeasure(rng.uniform(box.lo, box.hi, (n, box.dim)), rng.dirichlet(np.ones(n)))
        dmu = c.evaluate(mu.points, mu) - c.evaluate(mu.points, nu)
        dnu = c.evaluate(nu.points, mu) - c.evaluate(nu.points, nu)
        worst = min(worst, float(mu.weights @ dmu - nu.weights @ dnu))
    violated = worst < -1e-9
    return dict(
        min_pairing=worst,
        trials=trials,
        declared_monotone=bool(c.monotone),
        violated=violated,
        flagged=bool(c.monotone and violated),
    )


# -- the model ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelSpec:
    lagrangian: LagrangianSpec
    running: Coupling
    terminal: Coupling
    initial: InitialLaw
    horizon: float
    velocity_bound: float
    box: Box
    velocity_bound_source: str = "derived"

    @classmethod
    def build(cls, lagrangian, running, terminal, initial, horizon: float, velocity_bound: float | None = None):
        """Assemble a model and derive the velocity bound ``C`` and trajectory box ``K_C``.

        ``C`` compares an optimal path with the constant path: the running cost
        of the optimum is at most the cost of staying put, and the quadratic
        lower bound on ``L`` turns that into an L2 bound on the velocity.
        """
        dims = {lagrangian.dim, running.dim, terminal.dim, initial.dim}
        if len(dims) != 1:
            raise ValueError(f"dimension mismatch between model components: {dims}")
        if velocity_bound is not None:
            C = float(velocity_bound)
            return cls(lagrangian, running, terminal, initial, horizon, C, trajectory_box(initial, C, horizon), "given")
        T = float(horizon)
        supp = initial.support
        box = supp
        C = 0.0
        for _ in range(20):
            lb = lagrangian.bounds(box)
            l0_hi = lagrangian.bounds(supp).c_above if lagrangian.kind == "quadratic" else lb.c_above
            f_lo, _ = running.bounds(box, box)
            _, f_hi = running.bounds(supp, box)
            g_lo, _ = terminal.bounds(box, box)
            _, g_hi = terminal.bounds(supp, box)
            stay = T * l0_hi + T * f_hi + g_hi
            budget = stay - T * f_lo - g_lo + T * lb.c_below
            if not np.isfinite(budget):
                raise ValueError("cannot derive a velocity bound from unbounded costs; set velocity_bound")
            C_new = VELOCITY_SAFETY * math.sqrt(max(budget, 0.0) / (lb.lower * min(T, 1.0)))
            done = abs(C_new - C) <= 1e-12 * max(1.0, C_new)
            C = C_new
            box = trajectory_box(initial, C, T)
            if done:
                break
        return cls(lagrangian, running, terminal, initial, T, C, box)

    @property
    def dim(self) -> int:
        return self.initial.dim

    def with_couplings(self, running: Coupling, terminal: Coupling) -> ModelSpec:
        """Same data and derived constants with replaced couplings (e.g. ``f_N, g_N``)."""
        return replace(self, running=running, terminal=terminal)

    def with_initial(self, initial: InitialLaw) -> ModelSpec:
        return replace(self, initial=initial)

    @property
    def hamiltonian(self) -> HamiltonianSpec:
        return HamiltonianSpec(self.lagrangian)


def lagrangian_eval(L: LagrangianSpec, alpha, x):
    return L.value(alpha, x)


def hamiltonian_eval(H: HamiltonianSpec, xi, x):
    return H.value(xi, x)


def hamiltonian_grad(H: HamiltonianSpec, xi, x):
    return H.grad(xi, x)


def running_cost(model: ModelSpec, alpha, x, mu: ParticleMeasure) -> float:
    """``L(-alpha, x) + f(x, mu)`` where ``alpha`` is the path velocity."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(model.lagrangian.value(-alpha, x)) + float(model.running.evaluate(x[None], mu)[0])


def path_cost(model: ModelSpec, path: Trajectory, flow: MarginalFlow) -> float:
    """Left-endpoint rule for the running cost plus the terminal cost."""
    if path.grid != flow.grid:
        raise ValueError("path and flow live on different time grids")
    v = velocities(path)
    x = path.positions
    dt = path.grid.dt
    total = 0.0
    for k in range(path.grid.steps):
        mu = flow.slice(k)
        total += dt * (float(model.lagrangian.value(-v[k], x[k])) + float(model.running.evaluate(x[k][None], mu)[0]))
    return total + float(model.terminal.evaluate(x[-1][None], flow.slice(path.grid.steps))[0])
