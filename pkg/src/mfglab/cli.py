"""Command-line entry point: equilibrium solves and the convergence, LLN and regularity experiments.

Exit codes: 0 success, 2 validation error, 3 solver non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from . import io as mio
from .equilibrium import (
    EquilibriumResult,
    InconsistencyError,
    default_test_family,
    density_lp_check,
    lln_variance_check,
    solve_mfg,
    solve_mfg_n,
)
from .scenario import Scenario, ScenarioError, from_dict, load, loads, parse_overrides
from .transport import TransportSizeError, flow_distance
from .variational import BoxEscapeError, lipschitz_estimate, semiconcavity_estimate

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("solve-mfg", "solve-n", "converge", "lln", "regularity", "distance")
DENSITY_BINS = 128

CONVERGE_COLUMNS = [
    "N", "seed", "sup_t_d1", "u_sup_err", "mean_traj_sup_err", "exploitability_N", "iterations", "converged", "wall_time",
]
LIMIT_COLUMNS = ["exploitability", "iterations", "converged", "velocity_bound", "mc_error", "wall_time"]


class SolverFailure(RuntimeError):
    """At least one solve did not converge; outputs were still written."""


@dataclass
class ExperimentPlan:
    command: str
    scenario: Scenario | None
    out: Path | None
    N_list: list[int] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)
    particles: int | None = None
    mode: str = "shared"
    mc: int | None = None
    reps: int = 2000
    files: tuple = ()

    def __post_init__(self):
        if self.command in ("converge", "lln", "regularity"):
            if not self.N_list:
                raise ScenarioError("the N-list is empty")
            if any(n < 2 for n in self.N_list) or any(b <= a for a, b in zip(self.N_list, self.N_list[1:])):
                raise ScenarioError(f"the N-list must be strictly increasing with every N >= 2, got {self.N_list}")
        if self.command == "converge" and not self.seeds:
            raise ScenarioError("the seed list is empty")
        if self.mode not in ("shared", "sampled"):
            raise ScenarioError(f"unknown mode {self.mode!r}")
        if self.reps < 2:
            raise ScenarioError("reps must be at least 2")
        if self.particles is not None and self.particles < 1:
            raise ScenarioError("particles must be positive")
        if self.mc is not None and self.mc < 1:
            raise ScenarioError("--mc must be positive")
        if self.scenario is not None and (self.particles is not None or self.mc is not None):
            raw = {k: dict(v) for k, v in self.scenario.raw.items()}
            if self.particles is not None:
                raw.setdefault("discretization", {})["particles"] = str(self.particles)
            if self.mc is not None:
                raw.setdefault("solver", {})["M"] = str(self.mc)
            self.scenario = from_dict(raw, self.scenario.name)
            self.particles = self.mc = None

    def options(self) -> dict:
        return dict(N_list=self.N_list, seeds=self.seeds, mode=self.mode, reps=self.reps)


# -- workers ----------------------------------------------------------------------------


def _jobs() -> int:
    try:
        return max(1, int(os.environ.get("MFG_JOBS", "1")))
    except ValueError:
        raise ScenarioError("MFG_JOBS must be an integer") from None


def _map(fn, tasks: list) -> list:
    """Run ``fn`` over ``tasks`` on up to ``MFG_JOBS`` processes; results keep task order."""
    jobs = min(_jobs(), len(tasks))
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _scenario_with_seed(raw: dict, seed: int | None) -> Scenario:
    raw = {k: dict(v) for k, v in raw.items()}
    if seed is not None:
        raw.setdefault("solver", {})["seed"] = str(seed)
    return from_dict(raw)


def _solve_n(sc: Scenario, N: int, mode: str) -> EquilibriumResult:
    return solve_mfg_n(sc.model, N, sc.params, sc.disc, mode=mode)


def _converge_task(task):
    raw, N, seed, mode, ref = task
    sc = _scenario_with_seed(raw, seed)
    t0 = time.perf_counter()
    res = _solve_n(sc, N, mode)
    wall = time.perf_counter() - t0
    d1 = flow_distance(res.flow, ref["flow"])[0]
    inside = sc.model.box.contains(res.value.space.nodes(), tol=1e-12)
    u_err = float(np.max(np.abs(res.value.values[:, inside] - ref["u"][:, inside])))
    if mode == "shared":
        gap = np.sqrt(np.sum((res.measure.paths - ref["paths"]) ** 2, axis=-1)).max(axis=1)
        traj = float(res.measure.weights @ gap)
    else:
        traj = math.nan
    return dict(
        N=N, seed=seed, sup_t_d1=d1, u_sup_err=u_err, mean_traj_sup_err=traj, exploitability_N=res.exploitability,
        iterations=res.iterations, converged=res.converged, wall_time=wall,
    )


def _regularity_task(task):
    raw, N, mode = task
    sc = _scenario_with_seed(raw, None)
    res = solve_mfg(sc.model, sc.params, sc.disc) if N is None else _solve_n(sc, N, mode)
    return _regularity_rows("limit" if N is None else N, res, sc), res.converged


def _regularity_rows(label, res: EquilibriumResult, sc: Scenario) -> list[dict]:
    box = sc.model.box
    lip_x, lip_t = lipschitz_estimate(res.value, box)
    semi = semiconcavity_estimate(res.value, box)
    rows = [
        dict(N=label, metric="lipschitz_x", value=lip_x),
        dict(N=label, metric="lipschitz_t", value=lip_t),
        dict(N=label, metric="semiconcavity", value=semi),
    ]
    for p, name in ((2, "density_ratio_l2"), (math.inf, "density_ratio_linf")):
        rep = density_lp_check(res.flow, p, DENSITY_BINS, box)
        rows.append(dict(N=label, metric=name, value=rep.ratio))
    rows.append(dict(N=label, metric="exploitability", value=res.exploitability))
    return rows


# -- operations ----------------------------------------------------------------------------


def _manifest(plan: ExperimentPlan, extra: dict, trace=None, name="manifest.txt") -> None:
    sc = plan.scenario
    entries = dict(
        command=plan.command,
        version=__version__,
        options=plan.options(),
        solver=dataclasses.asdict(sc.params),
        discretization=dataclasses.asdict(sc.disc),
        velocity_bound=sc.model.velocity_bound,
        velocity_bound_source=sc.model.velocity_bound_source,
        box_lo=sc.model.box.lo.tolist(),
        box_hi=sc.model.box.hi.tolist(),
        kernel_backend=kernels.backend(),
    )
    entries.update(extra)
    mio.write_manifest(plan.out / name, entries, sc.render(), trace)


def _write_result(plan: ExperimentPlan, res: EquilibriumResult, extra: dict) -> None:
    out = plan.out
    mio.write_path_measure(out / "paths.csv", res.measure)
    mio.write_flow(out / "flow.csv", res.flow)
    if res.value is not None:
        mio.write_value_grid(out / "value.csv", res.value, res.feedback)
    summary = dict(
        exploitability=res.exploitability,
        iterations=res.iterations,
        converged=res.converged,
        velocity_bound=plan.scenario.model.velocity_bound,
        mc_error=res.diagnostics["mc_error"],
        wall_time=res.diagnostics["wall_time"],
    )
    mio.write_rows(out / "summary.csv", LIMIT_COLUMNS, [summary])
    d = res.diagnostics
    trace = list(zip(range(1, len(d["exploitability_trace"]) + 1), d["exploitability_trace"], d["flow_deltas"]))
    extra = dict(extra, seed=plan.scenario.params.seed, clamp_events=d["clamp_events"],
                 truncated_mass=d["truncated_mass"], certificates=[[i, e] for i, e in d["certificates"]],
                 converged=res.converged, wall_time=d["wall_time"])
    _manifest(plan, extra, trace)
    if not res.converged:
        raise SolverFailure(f"no certified equilibrium after {res.iterations} iterations "
                            f"(exploitability {res.exploitability:.3e})")


def run_solve_mfg(plan: ExperimentPlan) -> EquilibriumResult:
    sc = plan.scenario
    res = solve_mfg(sc.model, sc.params, sc.disc)
    _write_result(plan, res, {})
    return res


def run_solve_n(plan: ExperimentPlan) -> EquilibriumResult:
    sc = plan.scenario
    (N,) = plan.N_list
    res = _solve_n(sc, N, plan.mode)
    _write_result(plan, res, dict(N=N))
    return res


def run_converge(plan: ExperimentPlan) -> list[dict]:
    sc = plan.scenario
    t0 = time.perf_counter()
    ref = solve_mfg(sc.model, sc.params, sc.disc)
    limit = dict(
        exploitability=ref.exploitability, iterations=ref.iterations, converged=ref.converged,
        velocity_bound=sc.model.velocity_bound, mc_error=ref.diagnostics["mc_error"], wall_time=time.perf_counter() - t0,
    )
    refd = dict(flow=ref.flow, u=ref.value.values, paths=ref.measure.paths)
    tasks = [(sc.raw, N, s, plan.mode, refd) for N in plan.N_list for s in plan.seeds]
    rows = _map(_converge_task, tasks)
    mio.write_rows(plan.out / "converge.csv", CONVERGE_COLUMNS, rows)
    mio.write_rows(plan.out / "limit.csv", LIMIT_COLUMNS, [limit])
    mio.write_flow(plan.out / "limit_flow.csv", ref.flow)
    _manifest(plan, dict(wall_time=time.perf_counter() - t0))
    bad = [(r["N"], r["seed"]) for r in rows if not r["converged"]] + ([("limit", "-")] if not ref.converged else [])
    if bad:
        raise SolverFailure(f"non-converged solves (N, seed): {bad}")
    return rows


def run_lln(plan: ExperimentPlan) -> list[dict]:
    sc = plan.scenario
    t0 = time.perf_counter()
    res = _solve_n(sc, plan.N_list[-1], plan.mode)
    fam = default_test_family(res.measure)
    rows = []
    for N in plan.N_list:
        rows += lln_variance_check(res.measure, fam, N, plan.reps, sc.params.seed)
    for r in rows:
        r["ratio"] = r["v_hat"] / r["oracle"] if r["oracle"] > 0 else (0.0 if r["v_hat"] == 0 else math.inf)
    mio.write_rows(plan.out / "lln.csv", ["psi", "N", "v_hat", "scaled", "oracle", "ratio"], rows)
    mio.write_path_measure(plan.out / "paths.csv", res.measure)
    _manifest(plan, dict(N_solved=plan.N_list[-1], converged=res.converged, wall_time=time.perf_counter() - t0))
    if not res.converged:
        raise SolverFailure(f"the N={plan.N_list[-1]} solve did not converge")
    return rows


def run_regularity(plan: ExperimentPlan) -> list[dict]:
    sc = plan.scenario
    t0 = time.perf_counter()
    tasks = [(sc.raw, None, plan.mode)] + [(sc.raw, N, plan.mode) for N in plan.N_list]
    out = _map(_regularity_task, tasks)
    rows = [r for rs, _ in out for r in rs]
    mio.write_rows(plan.out / "regularity.csv", ["N", "metric", "value"], rows)
    _manifest(plan, dict(wall_time=time.perf_counter() - t0))
    if not all(ok for _, ok in out):
        raise SolverFailure("at least one solve did not converge")
    return rows


def run_distance(plan: ExperimentPlan) -> float:
    a, b = (mio.read_flow(f) for f in plan.files)
    try:
        sup, per = flow_distance(a, b)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    print(f"sup_t_d1 = {mio.FLOAT % sup}")
    rows = [dict(t=t, d1=d) for t, d in zip(a.grid.nodes, per)]
    if plan.out is not None:
        mio.write_rows(plan.out / "distance.csv", ["t", "d1"], rows)
    else:
        print("t,d1")
        for r in rows:
            print(f"{mio.FLOAT % r['t']},{mio.FLOAT % r['d1']}")
    return sup


RUNNERS = {
    "solve-mfg": run_solve_mfg,
    "solve-n": run_solve_n,
    "converge": run_converge,
    "lln": run_lln,
    "regularity": run_regularity,
    "distance": run_distance,
}


# -- argument parsing ---------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ScenarioError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mfglab", description="Mean-field and N-player equilibria of deterministic trajectory games.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
        sp.add_argument("--out", required=out_required, type=Path, help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a scenario key")

    sp = sub.add_parser("solve-mfg", help="solve the mean-field equilibrium")
    common(sp)
    sp.add_argument("--particles", type=int)

    sp = sub.add_parser("solve-n", help="solve the symmetric N-player equilibrium")
    common(sp)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--mode", default="shared", choices=["shared", "sampled"])
    sp.add_argument("--mc", type=int)

    sp = sub.add_parser("converge", help="distances between N-player and limit equilibria")
    common(sp)
    sp.add_argument("--N-list", type=_int_list, required=True)
    sp.add_argument("--seeds", type=_int_list, required=True)
    sp.add_argument("--mode", default="shared", choices=["shared", "sampled"])

    sp = sub.add_parser("lln", help="variance of opponent averages against the finite-N equilibrium")
    common(sp)
    sp.add_argument("--N-list", type=_int_list, required=True)
    sp.add_argument("--reps", type=int, default=2000)

    sp = sub.add_parser("regularity", help="Lipschitz, semiconcavity and density estimates across N")
    common(sp)
    sp.add_argument("--N-list", type=_int_list, required=True)

    sp = sub.add_parser("distance", help="sup_t d1 between two marginal-flow CSV files")
    sp.add_argument("files", nargs=2, type=Path)
    sp.add_argument("--out", type=Path)

    sp = sub.add_parser("rerun", help="repeat a run from its manifest")
    sp.add_argument("manifest", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    return p


def plan_from_args(args) -> ExperimentPlan:
    if args.command == "distance":
        return ExperimentPlan("distance", None, args.out, files=tuple(args.files))
    if args.command == "rerun":
        entries, text = mio.read_manifest(args.manifest)
        opts = entries.get("options", {})
        cmd = entries["command"]
        if cmd not in COMMANDS or cmd == "distance":
            raise ScenarioError(f"manifest command {cmd!r} cannot be rerun")
        sc = loads(text, name=Path(args.manifest).stem)
        return ExperimentPlan(cmd, sc, args.out, N_list=opts.get("N_list", []), seeds=opts.get("seeds", []),
                              mode=opts.get("mode", "shared"), reps=opts.get("reps", 2000))
    sc = load(args.scenario, parse_overrides(args.set))
    kw = dict(mode=getattr(args, "mode", "shared"))
    if args.command == "solve-mfg":
        kw["particles"] = args.particles
    elif args.command == "solve-n":
        if args.N < 2:
            raise ScenarioError("--N must be at least 2")
        kw.update(N_list=[args.N], mc=args.mc)
        raw = {k: dict(v) for k, v in sc.raw.items()}
        raw.setdefault("solver", {})["seed"] = str(args.seed)
        sc = from_dict(raw, sc.name)
    elif args.command == "converge":
        kw.update(N_list=args.N_list, seeds=args.seeds)
    elif args.command == "lln":
        kw.update(N_list=args.N_list, reps=args.reps)
    elif args.command == "regularity":
        kw.update(N_list=args.N_list)
    return ExperimentPlan(args.command, sc, args.out, **kw)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        plan = plan_from_args(args)
        if plan.out is not None:
            plan.out.mkdir(parents=True, exist_ok=True)
        RUNNERS[plan.command](plan)
        return EXIT_OK
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (SolverFailure, BoxEscapeError, InconsistencyError) as exc:
        print(f"mfglab: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ScenarioError, mio.FormatError, TransportSizeError) as exc:
        print(f"mfglab: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"mfglab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"mfglab: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
