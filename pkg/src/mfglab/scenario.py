"""Scenario files: ``key = value`` lines under bracketed sections."""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .equilibrium import Discretization, SolverParams
from .expressions import Expr
from .measures import InitialLaw
from .model import CouplingSpec, LagrangianSpec, ModelSpec

SECTIONS = {
    "dynamics": {"kind", "dim", "horizon", "b1", "b2", "velocity_bound"},
    "running_coupling": {"kind", "amplitude", "bandwidth", "kernel", "kernel_scale", "potential", "monotone"},
    "terminal_coupling": {"kind", "amplitude", "bandwidth", "kernel", "kernel_scale", "potential", "monotone"},
    "initial": {"kind", "lo", "hi", "mean", "std", "points", "weights", "file"},
    "discretization": {"n_t", "n_x", "alpha_grid", "particles"},
    "solver": {
        "scheme", "max_iters", "tolerance", "damping", "seed", "M",
        "eps_nash", "backend", "budget", "field_mode", "br_tolerance", "br_max_iters",
    },
}
REQUIRED = {"dynamics": {"dim", "horizon", "b1"}, "initial": {"kind"}}


class ScenarioError(ValueError):
    """Invalid scenario content (exit code 2)."""


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    model: ModelSpec
    disc: Discretization
    params: SolverParams
    raw: dict

    def render(self) -> str:
        """Canonical text of the scenario after overrides; loading it reproduces this scenario."""
        lines = []
        for sec in SECTIONS:
            if sec not in self.raw:
                continue
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in self.raw[sec].items()]
            lines.append("")
        return "\n".join(lines)


def _floats(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.replace(";", ",").split(",") if t.strip()], dtype=float)


def _vector(text: str, dim: int, what: str) -> np.ndarray:
    v = _floats(text)
    if v.size == 1:
        v = np.full(dim, v[0])
    if v.size != dim:
        raise ScenarioError(f"{what}: expected {dim} values, got {v.size}")
    return v


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ScenarioError(f"not a boolean: {text!r}")


def _coupling(sec: dict, dim: int) -> CouplingSpec:
    kind = sec.get("kind", "none")
    kw = dict(potential=Expr.parse(sec.get("potential", "0"), dim), monotone=_bool(sec.get("monotone", "false")))
    for key in ("amplitude", "bandwidth", "kernel_scale"):
        if key in sec:
            kw[key] = float(sec[key])
    if "kernel" in sec:
        kw["kernel"] = sec["kernel"]
    return CouplingSpec(kind, dim, **kw)


def _initial(sec: dict, dim: int, base: Path | None) -> InitialLaw:
    kind = sec["kind"]
    if kind == "uniform-box":
        return InitialLaw.uniform_box(_vector(sec["lo"], dim, "lo"), _vector(sec["hi"], dim, "hi"))
    if kind == "truncated-gaussian":
        return InitialLaw.truncated_gaussian(
            _vector(sec["mean"], dim, "mean"),
            _vector(sec["std"], dim, "std"),
            _vector(sec["lo"], dim, "lo"),
            _vector(sec["hi"], dim, "hi"),
        )
    if kind == "weighted-samples":
        if "file" in sec:
            path = Path(sec["file"])
            if not path.is_absolute() and base is not None:
                path = base / path
            data = np.loadtxt(path, delimiter=",", ndmin=2)
            pts, w = data[:, :dim], (data[:, dim] if data.shape[1] > dim else None)
        else:
            pts = _floats(sec["points"]).reshape(-1, dim)
            w = _floats(sec["weights"]) if "weights" in sec else None
        return InitialLaw.weighted_samples(pts, w)
    raise ScenarioError(f"unknown initial kind {kind!r}")


def parse_overrides(items) -> dict:
    """``["solver.seed=3", ...]`` to ``{"solver": {"seed": "3"}}``."""
    out: dict = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ScenarioError(f"override {item!r} is not of the form section.key=value")
        out.setdefault(sec, {})[name] = value.strip()
    return out


def from_dict(raw: dict, name: str = "scenario", base: Path | None = None) -> Scenario:
    for sec, keys in raw.items():
        if sec not in SECTIONS:
            raise ScenarioError(f"unknown section [{sec}]")
        unknown = set(keys) - SECTIONS[sec]
        if unknown:
            raise ScenarioError(f"unknown key(s) {sorted(unknown)} in [{sec}]")
    for sec, keys in REQUIRED.items():
        missing = keys - set(raw.get(sec, {}))
        if missing:
            raise ScenarioError(f"missing key(s) {sorted(missing)} in [{sec}]")
    try:
        dyn = raw["dynamics"]
        if dyn.get("kind", "quadratic") != "quadratic":
            raise ScenarioError("scenario files describe quadratic Lagrangians b1|a|^2 + b2 only")
        dim = int(dyn["dim"])
        lag = LagrangianSpec.quadratic(Expr.parse(dyn["b1"], dim), Expr.parse(dyn.get("b2", "0"), dim), dim)
        running = _coupling(raw.get("running_coupling", {}), dim)
        terminal = _coupling(raw.get("terminal_coupling", {}), dim)
        law = _initial(raw["initial"], dim, base)
        vb = float(dyn["velocity_bound"]) if "velocity_bound" in dyn else None
        model = ModelSpec.build(lag, running, terminal, law, float(dyn["horizon"]), velocity_bound=vb)
        d = raw.get("discretization", {})
        disc = Discretization(
            n_t=int(d.get("n_t", 32)),
            n_x=int(d["n_x"]) if "n_x" in d else None,
            alpha_k=int(d["alpha_grid"]) if "alpha_grid" in d else None,
            particles=int(d.get("particles", 128)),
        )
        s = raw.get("solver", {})
        defaults = SolverParams()
        params = SolverParams(
            scheme=s.get("scheme", defaults.scheme),
            damping=float(s.get("damping", defaults.damping)),
            max_iters=int(s.get("max_iters", defaults.max_iters)),
            eps_stop=float(s.get("tolerance", defaults.eps_stop)),
            eps_nash=float(s.get("eps_nash", defaults.eps_nash)),
            backend=s.get("backend", defaults.backend),
            seed=int(s.get("seed", defaults.seed)),
            mc_tuples=int(s.get("M", defaults.mc_tuples)),
            budget=int(s.get("budget", defaults.budget)),
            field_mode=s.get("field_mode", defaults.field_mode),
            tol_br=float(s.get("br_tolerance", defaults.tol_br)),
            br_max_iter=int(s.get("br_max_iters", defaults.br_max_iter)),
        )
    except ScenarioError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ScenarioError(str(exc)) from None
    return Scenario(name, model, disc, params, raw)


def loads(text: str, overrides=None, name: str = "scenario", base: Path | None = None) -> Scenario:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from None
    raw = {sec: dict(cp[sec]) for sec in cp.sections()}
    for sec, kv in (overrides or {}).items():
        raw.setdefault(sec, {}).update(kv)
    return from_dict(raw, name, base)


def load(path, overrides=None) -> Scenario:
    """Read a scenario file; ``OSError`` propagates for the I/O exit code."""
    path = Path(path)
    if not path.exists():
        bundled = Path(__file__).parent / "scenarios" / path.with_suffix(".ini").name
        if bundled.exists():
            path = bundled
    text = path.read_text(encoding="utf-8")
    return loads(text, overrides, path.stem, path.parent)


def bundled() -> list[Path]:
    return sorted((Path(__file__).parent / "scenarios").glob("*.ini"))


__all__ = ["Scenario", "ScenarioError", "load", "loads", "from_dict", "parse_overrides", "bundled"]
