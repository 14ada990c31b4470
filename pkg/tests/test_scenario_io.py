import numpy as np
import pytest

from mfglab import io as mio
from mfglab import scenario
from mfglab.measures import MarginalFlow, PathMeasure, TimeGrid, pushforward_marginals
from mfglab.scenario import ScenarioError

BASE = """
[dynamics]
dim = 1
horizon = 1.0
b1 = 0.5

[initial]
kind = uniform-box
lo = -0.5
hi = 0.5
"""


def test_minimal_scenario_defaults():
    sc = scenario.loads(BASE)
    assert sc.model.dim == 1
    assert sc.params.scheme == "fictitious-play"
    assert sc.disc.n_t == 32
    assert sc.model.velocity_bound_source == "derived"


@pytest.mark.parametrize(
    "extra",
    [
        "[dynamics]\nspeed = 3\n",
        "[physics]\nmass = 1\n",
        "[solver]\nscheme = gradient\n",
        "[solver]\ndamping = 1.5\n",
        "[initial]\nkind = cauchy\n",
        "[running_coupling]\nkind = kde-congestion\nbandwidth = 0\n",
        "[terminal_coupling]\npotential = x**2\n",
        "[discretization]\nn_t = 0\n",
    ],
)
def test_invalid_content_rejected(extra):
    raw = scenario.loads(BASE).raw
    text = BASE.replace("[initial]", extra + "\n[initial]") if "[dynamics]" not in extra and "[initial]" not in extra else None
    if text is None:
        sec, _, kv = extra.partition("\n")
        over = {sec.strip("[]"): dict(line.split(" = ") for line in kv.strip().splitlines())}
        with pytest.raises(ScenarioError):
            scenario.from_dict({**raw, **{k: {**raw.get(k, {}), **v} for k, v in over.items()}})
    else:
        with pytest.raises(ScenarioError):
            scenario.loads(text)


def test_missing_required_key():
    with pytest.raises(ScenarioError, match="b1"):
        scenario.loads(BASE.replace("b1 = 0.5", ""))


def test_malformed_text():
    with pytest.raises(ScenarioError):
        scenario.loads("dim = 1\n")


def test_overrides_apply_and_render_round_trip():
    over = scenario.parse_overrides(["solver.seed=7", "discretization.particles=12"])
    sc = scenario.loads(BASE, over)
    assert sc.params.seed == 7 and sc.disc.particles == 12
    again = scenario.loads(sc.render())
    assert again.params == sc.params and again.disc == sc.disc
    with pytest.raises(ScenarioError):
        scenario.parse_overrides(["seed=3"])
    with pytest.raises(ScenarioError):
        scenario.loads(BASE, scenario.parse_overrides(["solver.nonsense=3"]))


def test_all_bundled_scenarios_load():
    names = [p.stem for p in scenario.bundled()]
    assert {"s1_kde", "lq", "static", "linear_gaussian", "mean_attraction", "crowd_2d"} <= set(names)
    for p in scenario.bundled():
        sc = scenario.load(p)
        assert sc.model.velocity_bound > 0


def test_load_by_name_and_missing_file(tmp_path):
    assert scenario.load("lq").name == "lq"
    with pytest.raises(OSError):
        scenario.load(tmp_path / "nope.ini")


def test_weighted_samples_file(tmp_path):
    (tmp_path / "atoms.csv").write_text("0.0,0.25\n0.5,0.75\n")
    text = BASE.replace("kind = uniform-box\nlo = -0.5\nhi = 0.5", "kind = weighted-samples\nfile = atoms.csv")
    (tmp_path / "s.ini").write_text(text)
    sc = scenario.load(tmp_path / "s.ini")
    np.testing.assert_allclose(sc.model.initial.total_mass(), 1.0)


def _measure(P=3, n=4, d=2, seed=0):
    rng = np.random.default_rng(seed)
    grid = TimeGrid(1.5, n)
    x0 = rng.normal(size=(P, d))
    paths = x0[:, None] + np.cumsum(np.concatenate([np.zeros((P, 1, d)), rng.normal(size=(P, n, d)) * 0.1], axis=1), axis=1)
    w = rng.random(P)
    return PathMeasure(grid, x0, paths, w / w.sum())


def test_path_measure_round_trip(tmp_path):
    m = _measure()
    mio.write_path_measure(tmp_path / "p.csv", m)
    r = mio.read_path_measure(tmp_path / "p.csv")
    assert np.array_equal(r.paths, m.paths) and np.array_equal(r.weights, m.weights)
    assert r.grid == m.grid


def test_flow_round_trip(tmp_path):
    f = pushforward_marginals(_measure(d=1))
    mio.write_flow(tmp_path / "f.csv", f)
    r = mio.read_flow(tmp_path / "f.csv")
    assert np.array_equal(r.points, f.points) and np.array_equal(r.weights, f.weights)
    head = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert head == "particle_id,weight,t,x1"


@pytest.mark.parametrize(
    "mutate",
    [
        lambda L: ["id,weight,t,x1"] + L[1:],
        lambda L: [L[0]] + [L[2], L[1]] + L[3:],
        lambda L: [L[0]] + [ln.replace("0.5,", "0.7,", 1) if i == 0 else ln for i, ln in enumerate(L[1:])],
        lambda L: L[:1],
        lambda L: L[:-1],
        lambda L: [L[0]] + [L[1] + ",oops"] + L[2:],
    ],
)
def test_flow_format_errors(tmp_path, mutate):
    grid = TimeGrid(1.0, 2)
    f = MarginalFlow(grid, np.array([[[0.0], [1.0]]] * 3), np.full((3, 2), 0.5))
    mio.write_flow(tmp_path / "f.csv", f)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    (tmp_path / "g.csv").write_text("\n".join(mutate(lines)) + "\n")
    with pytest.raises(mio.FormatError):
        mio.read_flow(tmp_path / "g.csv")


def test_path_measure_needs_constant_weights(tmp_path):
    grid = TimeGrid(1.0, 1)
    f = MarginalFlow(grid, np.array([[[0.0], [1.0]], [[0.0], [1.0]]]), np.array([[0.5, 0.5], [0.25, 0.75]]))
    mio.write_flow(tmp_path / "f.csv", f)
    with pytest.raises(mio.FormatError):
        mio.read_path_measure(tmp_path / "f.csv")


def test_value_grid_layout(tmp_path, lq):
    from mfglab.variational import solve_hjb

    m = _measure(P=4, n=4, d=1)
    grid = TimeGrid(1.0, 4)
    flow = pushforward_marginals(PathMeasure(grid, m.initial, m.paths, m.weights))
    vg, fb = solve_hjb(lq, flow, n_x=16)
    mio.write_value_grid(tmp_path / "v.csv", vg, fb)
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "t,x1,u,a1"
    data = np.loadtxt(tmp_path / "v.csv", delimiter=",", skiprows=1)
    assert data.shape == (5 * vg.space.size, 4)
    assert np.all(np.diff(data[:, 0]) >= 0)
    np.testing.assert_array_equal(data[:, 2].reshape(5, -1), vg.values)


def test_rows_and_manifest_round_trip(tmp_path):
    mio.write_rows(tmp_path / "r.csv", ["a", "b", "c"], [dict(a=1, b=0.1, c=True), dict(a=2, b=1e-300, c=False)])
    rows = mio.read_rows(tmp_path / "r.csv")
    assert rows[0] == {"a": "1", "b": "0.10000000000000001", "c": "1"}
    assert float(rows[1]["b"]) == 1e-300 and rows[1]["c"] == "0"
    mio.write_manifest(tmp_path / "m.txt", {"seed": 3, "box": [1.0, 2.0]}, BASE, [(1, 0.5, 0.25)])
    entries, text = mio.read_manifest(tmp_path / "m.txt")
    assert entries == {"seed": 3, "box": [1.0, 2.0]}
    assert scenario.loads(text).model.dim == 1
    (tmp_path / "bad.txt").write_text("seed = 3\n")
    with pytest.raises(mio.FormatError):
        mio.read_manifest(tmp_path / "bad.txt")
