"""Closed-form smooth functions of the state used for b1, b2 and x-only potentials.

Every expression is reduced to the canonical form

    c + a.x + x^T Q x + sum_j s_j * phi_j(w_j . x + z_j)

with ``phi`` one of ``tanh``, ``sin``, ``cos`` or ``gauss`` (``exp(-z**2)``).
The canonical arrays are what the compiled kernels consume, so anything a
scenario file can express is also evaluable inside the hot loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy

BUMP_KINDS = ("tanh", "sin", "cos", "gauss")


class ExpressionError(ValueError):
    pass


class _gauss(sympy.Function):
    nargs = 1


@dataclass(frozen=True)
class Bump:
    scale: float
    kind: int
    weights: np.ndarray
    shift: float


@dataclass(frozen=True, eq=False)
class Expr:
    dim: int
    const: float = 0.0
    lin: np.ndarray = None
    quad: np.ndarray = None
    bumps: tuple[Bump, ...] = ()
    source: str = field(default="", compare=False)

    def __post_init__(self):
        d = self.dim
        lin = np.zeros(d) if self.lin is None else np.asarray(self.lin, dtype=float).reshape(d)
        quad = np.zeros((d, d)) if self.quad is None else np.asarray(self.quad, dtype=float).reshape(d, d)
        object.__setattr__(self, "lin", lin)
        object.__setattr__(self, "quad", 0.5 * (quad + quad.T))
        if not self.source:
            object.__setattr__(self, "source", self._render())

    # -- constructors -----------------------------------------------------------------

    @classmethod
    def constant(cls, value: float, dim: int) -> Expr:
        return cls(dim, const=float(value))

    @classmethod
    def squared_distance(cls, center, scale: float = 1.0) -> Expr:
        """``scale * |x - center|^2``."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        d = center.size
        return cls(
            d,
            const=scale * float(center @ center),
            lin=-2.0 * scale * center,
            quad=scale * np.eye(d),
        )

    @classmethod
    def parse(cls, text: str | float, dim: int) -> Expr:
        """Parse ``text`` over the variables ``x1 .. x{dim}``.

        Accepted: polynomials of degree at most two, plus terms
        ``s*tanh(lin)``, ``s*sin(lin)``, ``s*cos(lin)``, ``s*gauss(lin)`` whose
        argument ``lin`` is affine in x.
        """
        if isinstance(text, (int, float)):
            return cls.constant(float(text), dim)
        xs = tuple(sympy.Symbol(f"x{i + 1}") for i in range(dim))
        names = {f"x{i + 1}": s for i, s in enumerate(xs)}
        names.update(tanh=sympy.tanh, sin=sympy.sin, cos=sympy.cos, gauss=_gauss, pi=sympy.pi)
        try:
            expr = sympy.sympify(str(text), locals=names)
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise ExpressionError(f"cannot parse expression {text!r}: {exc}") from None
        unknown = expr.free_symbols - set(xs)
        if unknown:
            raise ExpressionError(f"unknown symbols {sorted(map(str, unknown))} in {text!r}")

        poly_part = sympy.Integer(0)
        bumps = []
        for term in sympy.Add.make_args(sympy.expand(expr, deep=False)):
            if term.is_polynomial(*xs):
                poly_part += term
                continue
            coef, rest = term.as_independent(*xs, as_Add=False)
            func_of = {sympy.tanh: 0, sympy.sin: 1, sympy.cos: 2, _gauss: 3}
            if not (isinstance(rest, sympy.Function) and rest.func in func_of):
                raise ExpressionError(f"unsupported term {term} in {text!r}")
            arg = sympy.Poly(sympy.expand(rest.args[0]), *xs)
            if arg.total_degree() > 1:
                raise ExpressionError(f"argument of {rest.func} must be affine in x: {rest}")
            w = np.array([float(arg.coeff_monomial(s)) for s in xs])
            z = float(arg.coeff_monomial(1))
            bumps.append(Bump(float(coef), func_of[rest.func], w, z))

        poly = sympy.Poly(sympy.expand(poly_part), *xs)
        if poly.total_degree() > 2:
            raise ExpressionError(f"polynomial part of {text!r} has degree > 2")
        const = float(poly.coeff_monomial(1))
        lin = np.array([float(poly.coeff_monomial(s)) for s in xs])
        quad = np.zeros((dim, dim))
        for i, si in enumerate(xs):
            quad[i, i] = float(poly.coeff_monomial(si**2))
            for j in range(i + 1, dim):
                c = float(poly.coeff_monomial(si * xs[j]))
                quad[i, j] = quad[j, i] = 0.5 * c
        return cls(dim, const, lin, quad, tuple(bumps), source=str(text))

    # -- evaluation -------------------------------------------------------------------

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        val = self.const + x @ self.lin + np.einsum("...i,ij,...j->...", x, self.quad, x)
        for b in self.bumps:
            phi, _, _ = _bump(b.kind, x @ b.weights + b.shift)
            val = val + b.scale * phi
        return val

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = self.lin + 2.0 * x @ self.quad
        for b in self.bumps:
            _, dphi, _ = _bump(b.kind, x @ b.weights + b.shift)
            g = g + b.scale * dphi[..., None] * b.weights
        return g

    def hess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h = np.broadcast_to(2.0 * self.quad, x.shape + (self.dim,)).copy()
        for b in self.bumps:
            _, _, d2 = _bump(b.kind, x @ b.weights + b.shift)
            h += b.scale * d2[..., None, None] * np.outer(b.weights, b.weights)
        return h

    def bounds(self, lo, hi, samples: int = 65) -> tuple[float, float]:
        """Min and max over a tensor sample grid of the box ``[lo, hi]``."""
        axes = [np.linspace(a, b, samples if b > a else 1) for a, b in zip(np.atleast_1d(lo), np.atleast_1d(hi))]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        vals = self(pts)
        return float(vals.min()), float(vals.max())

    @property
    def is_constant(self) -> bool:
        return not self.bumps and not self.lin.any() and not self.quad.any()

    def _render(self) -> str:
        if self.is_constant:
            return repr(self.const)
        parts = [repr(self.const)]
        for i, a in enumerate(self.lin):
            if a:
                parts.append(f"{float(a)!r}*x{i + 1}")
        for i in range(self.dim):
            for j in range(i, self.dim):
                q = self.quad[i, j] * (1 if i == j else 2)
                if q:
                    parts.append(f"{float(q)!r}*x{i + 1}*x{j + 1}")
        for b in self.bumps:
            arg = " + ".join([f"{float(w)!r}*x{i + 1}" for i, w in enumerate(b.weights) if w] + [repr(b.shift)])
            parts.append(f"{b.scale!r}*{BUMP_KINDS[b.kind]}({arg})")
        return " + ".join(parts)


def _bump(kind: int, z):
    z = np.asarray(z, dtype=float)
    if kind == 0:
        t = np.tanh(z)
        return t, 1.0 - t * t, -2.0 * t * (1.0 - t * t)
    if kind == 1:
        return np.sin(z), np.cos(z), -np.sin(z)
    if kind == 2:
        return np.cos(z), -np.sin(z), -np.cos(z)
    e = np.exp(-z * z)
    return e, -2.0 * z * e, (4.0 * z * z - 2.0) * e


def pack(exprs: list[Expr]) -> dict[str, np.ndarray]:
    """Flatten expressions into the array layout used by the kernels."""
    d = exprs[0].dim
    n = len(exprs)
    bumps = [(i, b) for i, e in enumerate(exprs) for b in e.bumps]
    nb = len(bumps)
    return dict(
        e_const=np.array([e.const for e in exprs], dtype=float),
        e_lin=np.array([e.lin for e in exprs], dtype=float).reshape(n, d),
        e_quad=np.array([e.quad for e in exprs], dtype=float).reshape(n, d, d),
        b_owner=np.array([i for i, _ in bumps], dtype=np.int64),
        b_kind=np.array([b.kind for _, b in bumps], dtype=np.int64),
        b_s=np.array([b.scale for _, b in bumps], dtype=float),
        b_w=np.array([b.weights for _, b in bumps], dtype=float).reshape(nb, d),
        b_z=np.array([b.shift for _, b in bumps], dtype=float),
    )
