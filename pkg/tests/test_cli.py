import os
import subprocess
import sys

import numpy as np
import pytest

from mfglab import io as mio
from mfglab.cli import main
from mfglab.measures import MarginalFlow, ParticleMeasure, TimeGrid
from mfglab.transport import w1_lp

S1_FAST = ["--set", "discretization.particles=16", "--set", "discretization.n_x=64", "--set", "discretization.n_t=16"]
LG_FAST = ["--set", "discretization.particles=16", "--set", "discretization.n_x=96", "--set", "discretization.n_t=16"]


def rows(path):
    return mio.read_rows(path)


def strip_wall_time(path):
    lines = path.read_text().splitlines()
    head = lines[0].split(",")
    keep = [i for i, h in enumerate(head) if h != "wall_time"]
    return [",".join(ln.split(",")[i] for i in keep) for ln in lines]


def test_solve_mfg_outputs(tmp_path):
    assert main(["solve-mfg", "--scenario", "lq", "--out", str(tmp_path), "--particles", "8"]) == 0
    for name in ("paths.csv", "flow.csv", "value.csv", "summary.csv", "manifest.txt"):
        assert (tmp_path / name).exists()
    s = rows(tmp_path / "summary.csv")[0]
    assert s["converged"] == "1" and float(s["exploitability"]) <= 1e-10
    assert len(mio.read_path_measure(tmp_path / "paths.csv")) == 8
    entries, text = mio.read_manifest(tmp_path / "manifest.txt")
    assert entries["discretization"]["particles"] == 8
    assert "particles = 8" in text


def test_solve_n_outputs(tmp_path):
    # with few tuples damped Picard can settle into a two-cycle; fictitious play averages it out
    argv = ["solve-n", "--scenario", "s1_kde", "--N", "4", "--seed", "3", "--out", str(tmp_path), "--mc", "8",
            "--set", "solver.scheme=fictitious-play"] + S1_FAST
    assert main(argv) == 0
    entries, _ = mio.read_manifest(tmp_path / "manifest.txt")
    assert entries["N"] == 4 and entries["seed"] == 3 and entries["solver"]["mc_tuples"] == 8


def test_solve_n_sampled(tmp_path):
    argv = ["solve-n", "--scenario", "s1_kde", "--N", "6", "--seed", "1", "--mode", "sampled", "--out", str(tmp_path),
            "--set", "solver.scheme=fictitious-play"]
    assert main(argv + S1_FAST) == 0
    assert len(mio.read_path_measure(tmp_path / "paths.csv")) == 6


@pytest.mark.parametrize(
    "argv",
    [
        ["converge", "--scenario", "s1_kde", "--N-list", "", "--seeds", "0"],
        ["converge", "--scenario", "s1_kde", "--N-list", "16,4", "--seeds", "0"],
        ["converge", "--scenario", "s1_kde", "--N-list", "1,4", "--seeds", "0"],
        ["converge", "--scenario", "s1_kde", "--N-list", "4,16", "--seeds", ""],
        ["converge", "--scenario", "s1_kde", "--N-list", "4,x", "--seeds", "0"],
        ["lln", "--scenario", "s1_kde", "--N-list", "4", "--reps", "1"],
        ["solve-mfg", "--scenario", "s1_kde", "--set", "solver.bogus=1"],
        ["solve-mfg", "--scenario", "s1_kde", "--set", "solver.damping=2"],
        ["solve-mfg", "--scenario", "s1_kde", "--particles", "0"],
        ["solve-n", "--scenario", "s1_kde", "--N", "1", "--seed", "0"],
        ["frobnicate"],
    ],
)
def test_validation_exit_code(tmp_path, argv, capsys):
    assert main(argv + ["--out", str(tmp_path / "o")] if argv != ["frobnicate"] else argv) == 2
    # validation happens before any output is produced
    assert not (tmp_path / "o" / "manifest.txt").exists()


def test_io_exit_code(tmp_path):
    assert main(["solve-mfg", "--scenario", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 4
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["solve-mfg", "--scenario", "lq", "--out", str(blocker / "sub")]) == 4
    assert main(["distance", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == 4


def test_solver_exit_code(tmp_path):
    argv = ["solve-mfg", "--scenario", "s1_kde", "--out", str(tmp_path), "--set", "solver.max_iters=1"] + S1_FAST
    assert main(argv) == 3
    # diagnostics are still written
    assert rows(tmp_path / "summary.csv")[0]["converged"] == "0"


def _flow_file(path, points, weights=None, T=1.0):
    points = np.asarray(points, dtype=float)
    n1, P = points.shape[:2]
    w = np.full((n1, P), 1.0 / P) if weights is None else np.asarray(weights, dtype=float)
    flow = MarginalFlow(TimeGrid(T, n1 - 1), points, w)
    mio.write_flow(path, flow)
    return flow


def test_distance_identity_and_translation(tmp_path, capsys):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(5, 7, 2))
    _flow_file(tmp_path / "a.csv", pts)
    _flow_file(tmp_path / "b.csv", pts + np.array([0.3, -0.4]))
    assert main(["distance", str(tmp_path / "a.csv"), str(tmp_path / "a.csv")]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "sup_t_d1 = 0"
    assert main(["distance", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"), "--out", str(tmp_path / "d")]) == 0
    out = capsys.readouterr().out
    assert float(out.split("=")[1]) == pytest.approx(0.5, abs=1e-12)
    per = rows(tmp_path / "d" / "distance.csv")
    assert len(per) == 5 and all(abs(float(r["d1"]) - 0.5) <= 1e-12 for r in per)


def test_distance_three_atom_fixture(tmp_path, capsys):
    a = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]] * 2)
    b = np.array([[[0.5, 0.5], [2.0, 1.0], [-1.0, 0.0]]] * 2)
    wa = np.array([[0.2, 0.3, 0.5]] * 2)
    wb = np.array([[0.6, 0.1, 0.3]] * 2)
    _flow_file(tmp_path / "a.csv", a, wa)
    _flow_file(tmp_path / "b.csv", b, wb)
    assert main(["distance", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == 0
    got = float(capsys.readouterr().out.splitlines()[0].split("=")[1])
    ref, _ = w1_lp(ParticleMeasure(a[0], wa[0]), ParticleMeasure(b[0], wb[0]))
    assert got == pytest.approx(ref, abs=1e-12)


def test_distance_grid_mismatch(tmp_path):
    _flow_file(tmp_path / "a.csv", np.zeros((3, 2, 1)))
    _flow_file(tmp_path / "b.csv", np.zeros((4, 2, 1)))
    assert main(["distance", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == 2
    (tmp_path / "c.csv").write_text("garbage\n")
    assert main(["distance", str(tmp_path / "a.csv"), str(tmp_path / "c.csv")]) == 2


def test_converge_linear_integral(tmp_path):
    argv = ["converge", "--scenario", "linear_gaussian", "--N-list", "4,64", "--seeds", "0,1", "--out", str(tmp_path)]
    assert main(argv + LG_FAST) == 0
    report = rows(tmp_path / "converge.csv")
    assert [(r["N"], r["seed"]) for r in report] == [("4", "0"), ("4", "1"), ("64", "0"), ("64", "1")]
    for r in report:
        for col in ("sup_t_d1", "u_sup_err", "mean_traj_sup_err"):
            assert 0.0 <= float(r[col]) <= 2e-8
    assert rows(tmp_path / "limit.csv")[0]["converged"] == "1"


def test_converge_jobs_independent(tmp_path, monkeypatch):
    argv = ["converge", "--scenario", "s1_kde", "--N-list", "4,8", "--seeds", "0,1"] + S1_FAST
    monkeypatch.setenv("MFG_JOBS", "1")
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("MFG_JOBS", "3")
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    assert strip_wall_time(tmp_path / "a" / "converge.csv") == strip_wall_time(tmp_path / "b" / "converge.csv")
    monkeypatch.setenv("MFG_JOBS", "many")
    assert main(argv + ["--out", str(tmp_path / "c")]) == 2


def test_lln_report(tmp_path):
    argv = ["lln", "--scenario", "s1_kde", "--N-list", "8,32", "--reps", "500", "--out", str(tmp_path)] + S1_FAST
    assert main(argv) == 0
    report = rows(tmp_path / "lln.csv")
    assert {"psi", "N", "v_hat", "scaled"} <= set(report[0])
    for r in report:
        if r["psi"] == "const":
            assert float(r["v_hat"]) == 0.0


def test_regularity_static(tmp_path):
    argv = ["regularity", "--scenario", "static", "--N-list", "4", "--out", str(tmp_path)]
    assert main(argv) == 0
    for r in rows(tmp_path / "regularity.csv"):
        if r["metric"].startswith("density_ratio"):
            assert float(r["value"]) == pytest.approx(1.0, abs=1e-12)


def test_regularity_fixed_terminal(tmp_path):
    sc = tmp_path / "lin.ini"
    sc.write_text(
        "[dynamics]\ndim = 1\nhorizon = 1.0\nb1 = 0.5\nvelocity_bound = 2.0\n"
        "[terminal_coupling]\nkind = none\npotential = 0.5*x1\n"
        "[initial]\nkind = uniform-box\nlo = -0.5\nhi = 0.5\n"
        "[discretization]\nn_t = 32\nn_x = 128\nparticles = 16\n"
    )
    assert main(["regularity", "--scenario", str(sc), "--N-list", "4", "--out", str(tmp_path / "o")]) == 0
    lip = [float(r["value"]) for r in rows(tmp_path / "o" / "regularity.csv") if r["metric"] == "lipschitz_x"]
    assert all(abs(v - 0.5) <= 0.05 for v in lip)


def test_rerun_reproduces(tmp_path):
    argv = ["solve-n", "--scenario", "s1_kde", "--N", "4", "--seed", "2", "--out", str(tmp_path / "a")] + S1_FAST
    assert main(argv) == 0
    assert main(["rerun", str(tmp_path / "a" / "manifest.txt"), "--out", str(tmp_path / "b")]) == 0
    for name in ("paths.csv", "flow.csv", "value.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert strip_wall_time(tmp_path / "a" / "summary.csv") == strip_wall_time(tmp_path / "b" / "summary.csv")


def test_console_entry_point(tmp_path):
    env = dict(os.environ)
    proc = subprocess.run(
        [sys.executable, "-m", "mfglab.cli", "solve-mfg", "--scenario", "lq", "--out", str(tmp_path), "--particles", "4"],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "mfglab.cli", "converge", "--scenario", "lq", "--N-list", "",
                           "--seeds", "0", "--out", str(tmp_path)], capture_output=True, text=True, env=env)
    assert proc.returncode == 2 and "N-list" in proc.stderr
