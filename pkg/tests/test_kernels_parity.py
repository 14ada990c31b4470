"""The numba kernels and the numpy fallback must agree."""

import numpy as np
import pytest

from mfglab import kernels, scenario
from mfglab.costs import tables_for_flow
from mfglab.equilibrium import solve_mfg
from mfglab.measures import ParticleMeasure, PathMeasure, TimeGrid, initial_atoms, pushforward_marginals
from mfglab.transport import kr_dual_certificate, w1_lp
from mfglab.variational import integrate_characteristics, path_costs, solve_hjb, space_grid, transcribe_batch

pytestmark = pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")

TOL = 1e-9


def both(fn):
    with kernels.use_backend("numpy"):
        a = fn()
    with kernels.use_backend("numba"):
        b = fn()
    return a, b


def drifting_flow(model, steps, n):
    atoms = initial_atoms(model.initial, n)
    grid = TimeGrid(model.horizon, steps)
    drift = 0.3 * np.sin(np.arange(n))[:, None, None] * grid.nodes[None, :, None]
    paths = atoms.points[:, None] + drift * np.ones(model.dim)
    return pushforward_marginals(PathMeasure(grid, atoms.points, paths, atoms.weights))


@pytest.mark.parametrize("name,mode", [("s1_kde", "exact"), ("s1_kde", "field"), ("mean_attraction", "auto"),
                                       ("linear_gaussian", "auto"), ("crowd_2d", "auto")])
def test_hjb_and_characteristics(name, mode):
    sc = scenario.load(name)
    n_x = 48 if sc.model.dim == 2 else 96
    flow = drifting_flow(sc.model, 8, 16)

    def run():
        vg, fb = solve_hjb(sc.model, flow, n_x=n_x, mode=mode)
        paths, clamps = integrate_characteristics(flow.points[0], fb)
        return vg.values, fb.velocity, paths, clamps

    a, b = both(run)
    np.testing.assert_allclose(a[0], b[0], rtol=0, atol=TOL)
    np.testing.assert_allclose(a[1], b[1], rtol=0, atol=1e-6)
    np.testing.assert_allclose(a[2], b[2], rtol=0, atol=1e-6)
    assert np.array_equal(a[3], b[3])


@pytest.mark.parametrize("name", ["s1_kde", "crowd_2d"])
def test_transcription_and_costs(name):
    sc = scenario.load(name)
    flow = drifting_flow(sc.model, 8, 9 if sc.model.dim == 2 else 10)
    x0s = flow.points[0]
    C = sc.model.velocity_bound

    def run():
        sp = space_grid(sc.model, flow.grid, 32)
        tab = tables_for_flow(sc.model, flow, sp)
        V0 = np.zeros((x0s.shape[0], flow.grid.steps, sc.model.dim))
        paths, J, it, pg, ok = transcribe_batch(tab, x0s, V0, C, 0.1, 1e-8, 200, 8)
        return paths, J, path_costs(tab, paths)

    a, b = both(run)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=0, atol=1e-7)


def test_dual_certificate():
    rng = np.random.default_rng(4)
    mu = ParticleMeasure(rng.normal(size=(9, 2)), rng.dirichlet(np.ones(9)))
    nu = ParticleMeasure(rng.normal(size=(7, 2)), rng.dirichlet(np.ones(7)))
    _, plan = w1_lp(mu, nu)
    a, b = both(lambda: kr_dual_certificate(mu, nu, plan, 1e-8))
    assert a.ok and b.ok
    assert a.dual == pytest.approx(b.dual, abs=1e-12)
    np.testing.assert_allclose(a.potential_mu, b.potential_mu, rtol=0, atol=1e-12)


def test_full_solve():
    sc = scenario.load("s1_kde", scenario.parse_overrides(
        ["discretization.particles=16", "discretization.n_x=64", "discretization.n_t=16"]))
    a, b = both(lambda: solve_mfg(sc.model, sc.params, sc.disc))
    assert a.iterations == b.iterations
    np.testing.assert_allclose(a.measure.paths, b.measure.paths, rtol=0, atol=1e-6)
    assert abs(a.exploitability - b.exploitability) <= 1e-6
