import warnings

import numpy as np
import pytest
from conftest import lq_model

from mfglab.costs import tables_for_flow
from mfglab.expressions import Expr
from mfglab.grids import SpaceGrid
from mfglab.measures import Box, MarginalFlow, PathMeasure, TimeGrid, Trajectory, initial_atoms, pushforward_marginals
from mfglab.model import CouplingSpec, LagrangianSpec, ModelSpec, path_cost
from mfglab.variational import (
    BoxEscapeError,
    ClampWarning,
    FeedbackGrid,
    ValueGrid,
    best_response_transcription,
    hjb_from_tables,
    integrate_characteristic,
    lipschitz_estimate,
    semiconcavity_estimate,
    solve_hjb,
    space_grid,
    value_of,
)


def static_flow(model, steps, n=16):
    atoms = initial_atoms(model.initial, n)
    grid = TimeGrid(model.horizon, steps)
    paths = np.repeat(atoms.points[:, None], steps + 1, axis=1)
    return pushforward_marginals(PathMeasure(grid, atoms.points, paths, atoms.weights))


def lq_exact(x, t, T=1.0):
    return (x - 1.0) ** 2 / (1.0 + 2.0 * (T - t))


def unconstrained_mask(model, vg, frac=0.9):
    """Core nodes where the unconstrained optimal speed stays below ``frac * C`` at every time."""
    x = vg.space.nodes()[:, 0]
    worst = 2.0 * np.abs(1.0 - x)  # speed at t = T is the largest
    return vg.space.in_core() & (worst <= frac * model.velocity_bound)


def manual_grid(values_fn, steps=4, n=21, lo=-1.0, hi=1.0):
    core = Box(np.array([lo]), np.array([hi]))
    sp = SpaceGrid.build(core, n, 0.0)
    grid = TimeGrid(1.0, steps)
    x = sp.nodes()[:, 0]
    vals = np.stack([values_fn(x, t) for t in grid.nodes])
    return ValueGrid(sp, grid, vals)


class TestHJB:
    def test_zero_data(self):
        m = lq_model(terminal="0", velocity_bound=1.0)
        vg, fb = solve_hjb(m, static_flow(m, 8), n_x=64)
        assert np.all(vg.values == 0.0)
        assert np.all(fb.velocity == 0.0)

    def test_linear_terminal_closed_form(self):
        m = lq_model(terminal="x1", velocity_bound=2.0)
        vg, fb = solve_hjb(m, static_flow(m, 128), n_x=256)
        x = vg.space.nodes()[:, 0]
        # the discrete scheme can sample up to speed C, so stay that far from the left grid edge
        ok = vg.space.in_core() & (x >= vg.space.box.lo[0] + m.velocity_bound * m.horizon)
        for k, t in enumerate(vg.grid.nodes):
            assert np.max(np.abs(vg.values[k, ok] - (x[ok] - (1.0 - t) / 2))) <= 5e-2
        np.testing.assert_allclose(fb.velocity[:, ok, 0], -1.0, atol=1e-6)

    def test_terminal_condition_exact(self, s1):
        flow = static_flow(s1.model, 8, 32)
        vg, _ = solve_hjb(s1.model, flow, n_x=64)
        nodes = vg.space.nodes()
        g = s1.model.terminal.evaluate(nodes, flow.slice(8))
        np.testing.assert_allclose(vg.values[-1], g, rtol=0, atol=1e-13)

    def test_constant_shift(self, s1):
        flow = static_flow(s1.model, 8, 32)
        c = 0.731
        g = s1.model.terminal
        shifted = CouplingSpec(g.kind, g.dim, g.amplitude, g.bandwidth, g.kernel, g.kernel_scale,
                               Expr.parse(f"(x1 - 1)**2 + {c}", 1), g.monotone)
        m2 = s1.model.with_couplings(s1.model.running, shifted)
        u1, _ = solve_hjb(s1.model, flow, n_x=64)
        u2, _ = solve_hjb(m2, flow, n_x=64)
        assert np.max(np.abs(u2.values - u1.values - c)) <= 1e-12

    def test_feedback_bound(self, s1):
        _, fb = solve_hjb(s1.model, static_flow(s1.model, 8, 32), n_x=64)
        assert np.all(np.abs(fb.velocity) <= s1.model.velocity_bound * (1 + 1e-12))

    def test_lq_first_order(self, lq):
        errs = []
        for n_t, n_x in ((32, 64), (64, 128), (128, 256)):
            vg, _ = solve_hjb(lq, static_flow(lq, n_t), n_x=n_x)
            mask = unconstrained_mask(lq, vg)
            x = vg.space.nodes()[mask, 0]
            errs.append(max(np.max(np.abs(vg.values[k, mask] - lq_exact(x, t))) for k, t in enumerate(vg.grid.nodes)))
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        assert np.all((ratios >= 1.5) & (ratios <= 3.0)), (errs, ratios)

    def test_single_step(self, lq):
        vg, fb = solve_hjb(lq, static_flow(lq, 1), n_x=64)
        assert vg.values.shape[0] == 2 and fb.velocity.shape[0] == 1
        assert np.all(np.isfinite(vg.values))

    def test_two_dimensional_terminal(self):
        L = LagrangianSpec.quadratic(0.5, 0.0, 2)
        from mfglab.measures import InitialLaw

        g = CouplingSpec("none", 2, potential=Expr.parse("(x1 - 1)**2 + x2**2", 2))
        m = ModelSpec.build(
            L, CouplingSpec("none", 2), g, InitialLaw.uniform_box([-0.5, -0.5], [0.5, 0.5]), 1.0, velocity_bound=1.5
        )
        errs = []
        for n_x, n_t in ((48, 16), (96, 32)):
            vg, fb = solve_hjb(m, static_flow(m, n_t, 16), n_x=n_x)
            errs.append(abs(value_of(vg, [0.0, 0.0], 0.0) - 1.0 / 3.0))
        assert errs[0] <= 5e-2 and errs[1] < 0.6 * errs[0]
        assert np.all(np.linalg.norm(fb.velocity, axis=-1) <= m.velocity_bound * (1 + 1e-12))

    def test_box_escape(self):
        # optimal speed 10 pushes edge nodes past a grid margin sized for speed 1
        m = lq_model(terminal="-10*x1", velocity_bound=1.0)
        flow = static_flow(m, 8)
        sp = space_grid(m, flow.grid, 64)
        tab = tables_for_flow(m, flow, sp)
        hjb_from_tables(tab, sp, flow.grid, m.velocity_bound)
        with pytest.raises(BoxEscapeError):
            hjb_from_tables(tab, sp, flow.grid, 20.0)


class TestCharacteristics:
    def _fb(self, a, steps=8):
        core = Box(np.array([-2.0]), np.array([2.0]))
        sp = SpaceGrid.build(core, 41, 1.0)
        grid = TimeGrid(1.0, steps)
        return FeedbackGrid(sp, grid, np.full((steps, sp.size, 1), a), 2.0, 0)

    def test_zero_feedback(self):
        tr = integrate_characteristic([0.3], self._fb(0.0))
        assert np.all(tr.positions == 0.3)

    def test_constant_feedback(self):
        tr = integrate_characteristic([0.0], self._fb(-1.0))
        np.testing.assert_allclose(tr.positions[:, 0], -tr.grid.nodes, atol=1e-14)

    def test_clamp_warning(self):
        fb = self._fb(-2.0, steps=4)
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            integrate_characteristic([-2.5], fb)
        assert any(issubclass(w.category, ClampWarning) for w in rec)

    def test_lq_characteristic(self, lq):
        vg, fb = solve_hjb(lq, static_flow(lq, 64), n_x=256)
        tr = integrate_characteristic([0.0], fb)
        exact = 2.0 / 3.0 * tr.grid.nodes
        assert np.max(np.abs(tr.positions[:, 0] - exact)) <= 5e-2


class TestTranscription:
    def test_lq_oracle(self, lq):
        br = best_response_transcription(lq, static_flow(lq, 32), [0.0])
        assert br.converged
        assert br.cost == pytest.approx(1.0 / 3.0, abs=1e-6)
        slope = np.diff(br.trajectory.positions[:, 0]) / br.trajectory.grid.dt
        np.testing.assert_allclose(slope, 2.0 / 3.0, atol=1e-4)

    def test_constant_costs_stay_put(self):
        m = lq_model(terminal="2.5", velocity_bound=1.0)
        br = best_response_transcription(m, static_flow(m, 16), [0.2])
        np.testing.assert_allclose(br.trajectory.positions[:, 0], 0.2, atol=1e-12)

    def test_descent_from_warm_start(self, s1):
        flow = static_flow(s1.model, 16, 32)
        start = Trajectory(flow.grid, np.linspace(0.1, -0.5, 17)[:, None])
        br = best_response_transcription(s1.model, flow, [0.1], warm_start=start, n_x=64)
        assert br.cost <= path_cost(s1.model, start, flow) + 1e-12
        assert br.cost == pytest.approx(path_cost(s1.model, br.trajectory, flow), abs=1e-12)

    def test_velocity_bound_respected(self):
        m = lq_model(terminal="10*(x1 - 3)**2", velocity_bound=1.0)
        br = best_response_transcription(m, static_flow(m, 16), [0.0])
        v = np.diff(br.trajectory.positions[:, 0]) / br.trajectory.grid.dt
        assert np.all(np.abs(v) <= 1.0 + 1e-12)
        assert np.max(np.abs(v)) == pytest.approx(1.0)

    def test_dynamic_programming_consistency(self, lq):
        for n_t, n_x in ((32, 128), (64, 256)):
            flow = static_flow(lq, n_t)
            vg, _ = solve_hjb(lq, flow, n_x=n_x)
            br = best_response_transcription(lq, flow, [0.0], n_x=n_x)
            h = float(vg.space.h[0])
            c_scheme = abs(value_of(vg, [0.0], 0.0) - br.cost) / (h + flow.grid.dt)
            assert c_scheme <= 10.0


class TestAccessors:
    def test_value_of_node_and_midpoint(self):
        vg = manual_grid(lambda x, t: 3 * x + t)
        x = vg.space.nodes()[:, 0]
        assert value_of(vg, [x[5]], 0.25) == vg.values[1, 5]
        mid = 0.5 * (x[5] + x[6])
        assert value_of(vg, [mid], 0.25) == pytest.approx(0.5 * (vg.values[1, 5] + vg.values[1, 6]))
        with pytest.raises(ValueError):
            value_of(vg, [100.0], 0.0)
        with pytest.raises(ValueError):
            value_of(vg, [0.0], 2.0)

    def test_value_of_matches_transcription(self, lq):
        flow = static_flow(lq, 64)
        vg, _ = solve_hjb(lq, flow, n_x=256)
        br = best_response_transcription(lq, flow, [0.1])
        assert value_of(vg, [0.1], 0.0) == pytest.approx(br.cost, abs=5e-2)

    def test_lipschitz_simple(self):
        assert lipschitz_estimate(manual_grid(lambda x, t: 0 * x + 2.0)) == (0.0, 0.0)
        lx, lt = lipschitz_estimate(manual_grid(lambda x, t: x))
        assert lx == pytest.approx(1.0) and lt == 0.0

    def test_semiconcavity_simple(self):
        assert semiconcavity_estimate(manual_grid(lambda x, t: -(x**2))) == pytest.approx(-2.0)
        assert abs(semiconcavity_estimate(manual_grid(lambda x, t: 4 * x - 1))) <= 1e-9

    def test_lq_regularity(self, lq):
        vg, _ = solve_hjb(lq, static_flow(lq, 64), n_x=256)
        # region where the velocity bound never binds
        half = 0.45 * lq.velocity_bound
        box = Box(np.array([1.0 - half]), np.array([min(1.0 + half, lq.box.hi[0])]))
        lx, _ = lipschitz_estimate(vg, box)
        assert lx <= 2.0 * half + 0.1
        assert semiconcavity_estimate(vg, box) <= 2.0 + 0.1
