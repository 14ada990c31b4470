"""CSV readers and writers for path measures, marginal flows and value grids, plus run manifests."""

from __future__ import annotations

import io as _io
import json
from pathlib import Path

import numpy as np

from .measures import MarginalFlow, PathMeasure, TimeGrid
from .variational import FeedbackGrid, ValueGrid

FLOAT = "%.17g"
WEIGHT_TOL = 1e-12
TIME_TOL = 1e-12


class FormatError(ValueError):
    """A file parsed but violates the expected layout (validation exit code)."""


def _header(d: int) -> str:
    return ",".join(["particle_id", "weight", "t"] + [f"x{i + 1}" for i in range(d)])


def _write(path, header: str, columns: list[np.ndarray], fmts: list[str]) -> None:
    table = np.column_stack(columns) if columns else np.empty((0, 0))
    buf = _io.StringIO()
    np.savetxt(buf, table, fmt=fmts, delimiter=",", header=header, comments="")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _particle_rows(grid: TimeGrid, points: np.ndarray, weights: np.ndarray):
    """``points`` (P, n+1, d), ``weights`` (P, n+1) to columns sorted by (particle, t)."""
    P, n1, d = points.shape
    ids = np.repeat(np.arange(P), n1)
    t = np.tile(grid.nodes, P)
    cols = [ids, weights.ravel(), t] + [points[:, :, i].ravel() for i in range(d)]
    return cols, ["%d"] + [FLOAT] * (d + 2)


def write_path_measure(path, m: PathMeasure) -> None:
    w = np.repeat(m.weights[:, None], m.grid.steps + 1, axis=1)
    cols, fmts = _particle_rows(m.grid, m.paths, w)
    _write(path, _header(m.dim), cols, fmts)


def write_flow(path, flow: MarginalFlow) -> None:
    cols, fmts = _particle_rows(flow.grid, flow.points.transpose(1, 0, 2), flow.weights.T)
    _write(path, _header(flow.dim), cols, fmts)


def _read_particles(path):
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    head = [h.strip() for h in lines[0].split(",")]
    d = len(head) - 3
    if d < 1 or head != _header(d).split(","):
        raise FormatError(f"{path}: expected header {_header(max(d, 1))!r}, got {lines[0]!r}")
    if not any(ln.strip() for ln in lines[1:]):
        raise FormatError(f"{path}: no rows")
    try:
        data = np.loadtxt(_io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    ids = data[:, 0]
    if np.any(ids != np.round(ids)) or np.any(ids < 0):
        raise FormatError(f"{path}: particle_id must be a non-negative integer")
    ids = ids.astype(np.int64)
    uniq, counts = np.unique(ids, return_counts=True)
    n1 = int(counts[0])
    if np.any(counts != n1):
        raise FormatError(f"{path}: particles have different numbers of time nodes")
    order = np.lexsort((data[:, 2], ids))
    if not np.array_equal(order, np.arange(len(ids))):
        raise FormatError(f"{path}: rows must be sorted by (particle_id, t)")
    P = uniq.size
    t = data[:, 2].reshape(P, n1)
    if n1 < 2:
        raise FormatError(f"{path}: need at least two time nodes")
    if np.any(t != t[0]):
        raise FormatError(f"{path}: particles use different time nodes")
    grid = TimeGrid(float(t[0, -1]), n1 - 1)
    if t[0, 0] != 0.0 or np.max(np.abs(t[0] - grid.nodes)) > TIME_TOL * max(1.0, grid.horizon):
        raise FormatError(f"{path}: time nodes are not a uniform grid starting at 0")
    w = data[:, 1].reshape(P, n1)
    pts = data[:, 3:].reshape(P, n1, d)
    sums = w.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > WEIGHT_TOL * max(1, P)):
        k = int(np.argmax(np.abs(sums - 1.0)))
        raise FormatError(f"{path}: weights at t={grid.nodes[k]} sum to {sums[k]!r}, not 1")
    return grid, w, pts


def read_flow(path) -> MarginalFlow:
    grid, w, pts = _read_particles(path)
    try:
        return MarginalFlow(grid, np.ascontiguousarray(pts.transpose(1, 0, 2)), np.ascontiguousarray(w.T))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_path_measure(path) -> PathMeasure:
    grid, w, pts = _read_particles(path)
    if np.any(w != w[:, :1]):
        raise FormatError(f"{path}: a path measure carries one weight per particle")
    try:
        return PathMeasure(grid, pts[:, 0].copy(), pts, w[:, 0].copy())
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_value_grid(path, vg: ValueGrid, fb: FeedbackGrid | None = None) -> None:
    """Rows ``t,x1..xd,u,a1..ad`` sorted by (t, node). The feedback has no slice at T; the last one is repeated."""
    nodes = vg.space.nodes()
    nn, d = nodes.shape
    n1 = vg.grid.steps + 1
    t = np.repeat(vg.grid.nodes, nn)
    X = np.tile(nodes, (n1, 1))
    cols = [t] + [X[:, i] for i in range(d)] + [vg.values.ravel()]
    names = ["t"] + [f"x{i + 1}" for i in range(d)] + ["u"]
    if fb is not None:
        A = np.concatenate([fb.velocity, fb.velocity[-1:]], axis=0).reshape(-1, d)
        cols += [A[:, i] for i in range(d)]
        names += [f"a{i + 1}" for i in range(d)]
    _write(path, ",".join(names), cols, [FLOAT] * len(cols))


def write_rows(path, header: list[str], rows: list[dict]) -> None:
    """Generic report CSV. Floats use round-trip formatting so reruns are byte-identical."""

    def fmt(v):
        if isinstance(v, (bool, np.bool_)):
            return "1" if v else "0"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return FLOAT % v
        return str(v)

    lines = [",".join(header)] + [",".join(fmt(r[h]) for h in header) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_rows(path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split(",")
    return [dict(zip(head, ln.split(","))) for ln in lines[1:] if ln]


# -- manifest ---------------------------------------------------------------------

SCENARIO_MARK = "--- scenario ---"
TRACE_MARK = "--- trace ---"


def write_manifest(path, entries: dict, scenario_text: str, trace: list[tuple] | None = None) -> None:
    """Plain-text manifest: ``key = json`` lines, the full scenario, and an optional iteration trace."""
    lines = ["# mfglab run manifest"]
    lines += [f"{k} = {json.dumps(v, sort_keys=True)}" for k, v in entries.items()]
    lines += [SCENARIO_MARK, scenario_text.rstrip("\n")]
    if trace:
        lines += [TRACE_MARK, "iteration,exploitability,flow_delta"]
        lines += [f"{i},{FLOAT % e},{FLOAT % dlt}" for i, e, dlt in trace]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> tuple[dict, str]:
    text = Path(path).read_text(encoding="utf-8")
    if SCENARIO_MARK not in text:
        raise FormatError(f"{path}: not a run manifest")
    head, rest = text.split(SCENARIO_MARK + "\n", 1)
    scenario_text = rest.split(TRACE_MARK, 1)[0]
    entries = {}
    for ln in head.splitlines():
        if not ln or ln.startswith("#"):
            continue
        k, _, v = ln.partition(" = ")
        try:
            entries[k] = json.loads(v)
        except json.JSONDecodeError:
            raise FormatError(f"{path}: bad manifest line {ln!r}") from None
    return entries, scenario_text


__all__ = [
    "FormatError",
    "write_path_measure",
    "read_path_measure",
    "write_flow",
    "read_flow",
    "write_value_grid",
    "write_rows",
    "read_rows",
    "write_manifest",
    "read_manifest",
]
