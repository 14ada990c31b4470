"""Flat array bundle describing the per-slice cost of a frozen flow."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

# coupling evaluation modes
MODE_NONE, MODE_EXACT, MODE_FIELD = 0, 1, 2
# kernel codes
KERNEL_NONE, KERNEL_GAUSSIAN, KERNEL_DISTANCE, KERNEL_QUADRATIC = 0, 1, 2, 3


class CostTables(NamedTuple):
    """Everything the compiled kernels need to evaluate running and terminal costs.

    Expression ids: 0 = b1, 1 = b2, 2 = running potential, 3 = terminal potential.
    ``run_mom[k] = [q, c, l_1..l_d]`` adds ``q|x|^2 + c + l.x`` on slice ``k``
    (``term_mom`` likewise at ``T``). Kernel interactions are either exact sums
    over ``pts`` or cubic Hermite fields on the space grid, which already
    include amplitude and weights.
    """

    dt: float
    e_const: np.ndarray
    e_lin: np.ndarray
    e_quad: np.ndarray
    b_owner: np.ndarray
    b_kind: np.ndarray
    b_s: np.ndarray
    b_w: np.ndarray
    b_z: np.ndarray
    run_mom: np.ndarray
    term_mom: np.ndarray
    run_mode: int
    run_kind: int
    run_amp: float
    run_scale: float
    term_mode: int
    term_kind: int
    term_amp: float
    term_scale: float
    pts: np.ndarray
    run_w: np.ndarray
    term_w: np.ndarray
    grid_lo: np.ndarray
    grid_h: np.ndarray
    grid_n: np.ndarray
    run_field: np.ndarray
    term_field: np.ndarray


def field_components(dim: int) -> int:
    return 2 if dim == 1 else 4


def make_tables(
    dt: float,
    pack: dict,
    run_mom: np.ndarray,
    term_mom: np.ndarray,
    run: tuple[int, int, float, float] = (0, 0, 0.0, 1.0),
    term: tuple[int, int, float, float] = (0, 0, 0.0, 1.0),
    pts: np.ndarray | None = None,
    run_w: np.ndarray | None = None,
    term_w: np.ndarray | None = None,
    grid: tuple | None = None,
    run_field: np.ndarray | None = None,
    term_field: np.ndarray | None = None,
) -> CostTables:
    """Assemble tables with placeholder arrays for unused parts (fixed dtypes and ranks)."""
    d = pack["e_lin"].shape[1]
    n_slices = run_mom.shape[0]
    nc = field_components(d)
    f64 = np.float64
    if grid is None:
        grid = (np.zeros(d), np.ones(d), np.full(d, 2, dtype=np.int64))
    lo, h, n = grid
    return CostTables(
        dt=float(dt),
        e_const=np.ascontiguousarray(pack["e_const"], dtype=f64),
        e_lin=np.ascontiguousarray(pack["e_lin"], dtype=f64),
        e_quad=np.ascontiguousarray(pack["e_quad"], dtype=f64),
        b_owner=np.ascontiguousarray(pack["b_owner"], dtype=np.int64),
        b_kind=np.ascontiguousarray(pack["b_kind"], dtype=np.int64),
        b_s=np.ascontiguousarray(pack["b_s"], dtype=f64),
        b_w=np.ascontiguousarray(pack["b_w"], dtype=f64).reshape(-1, d),
        b_z=np.ascontiguousarray(pack["b_z"], dtype=f64),
        run_mom=np.ascontiguousarray(run_mom, dtype=f64),
        term_mom=np.ascontiguousarray(term_mom, dtype=f64),
        run_mode=int(run[0]),
        run_kind=int(run[1]),
        run_amp=float(run[2]),
        run_scale=float(run[3]),
        term_mode=int(term[0]),
        term_kind=int(term[1]),
        term_amp=float(term[2]),
        term_scale=float(term[3]),
        pts=np.ascontiguousarray(np.zeros((n_slices, 0, d)) if pts is None else pts, dtype=f64),
        run_w=np.ascontiguousarray(np.zeros(0) if run_w is None else run_w, dtype=f64),
        term_w=np.ascontiguousarray(np.zeros(0) if term_w is None else term_w, dtype=f64),
        grid_lo=np.ascontiguousarray(lo, dtype=f64),
        grid_h=np.ascontiguousarray(h, dtype=f64),
        grid_n=np.ascontiguousarray(n, dtype=np.int64),
        run_field=np.ascontiguousarray(np.zeros((n_slices, 0, nc)) if run_field is None else run_field, dtype=f64),
        term_field=np.ascontiguousarray(np.zeros((0, nc)) if term_field is None else term_field, dtype=f64),
    )
