"""Uniform space grid covering the trajectory box."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import Box


@dataclass(frozen=True, eq=False)
class SpaceGrid:
    """Tensor grid over ``core`` inflated by ``margin + h`` per side.

    With ``margin = C * dt`` every foot ``x + a dt`` of a node inside ``core``
    lands inside the grid, and one extra cell keeps the clamped boundary layer
    away from the core.
    """

    core: Box
    lo: np.ndarray
    h: np.ndarray
    n: np.ndarray

    @classmethod
    def build(cls, core: Box, n_x, margin: float = 0.0) -> SpaceGrid:
        d = core.dim
        n = np.broadcast_to(np.asarray(n_x, dtype=np.int64), (d,)).copy()
        if np.any(n < 4):
            raise ValueError("need at least 4 nodes per axis")
        width = core.hi - core.lo
        width = np.where(width > 0, width, 1.0)
        h = (width + 2.0 * margin) / (n - 3)
        lo = core.lo - margin - h
        return cls(core, lo, h, n)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def hi(self) -> np.ndarray:
        return self.lo + (self.n - 1) * self.h

    @property
    def box(self) -> Box:
        return Box(self.lo, self.hi)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    def axes(self) -> list[np.ndarray]:
        return [self.lo[i] + np.arange(self.n[i]) * self.h[i] for i in range(self.dim)]

    def nodes(self) -> np.ndarray:
        """Node coordinates ``(size, d)`` in row-major order (last axis fastest)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def in_core(self, tol: float = 1e-12) -> np.ndarray:
        return self.core.contains(self.nodes(), tol)

    def arrays(self):
        return self.lo, self.h, self.n
