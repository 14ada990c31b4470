import numpy as np
import pytest

from mfglab.measures import (
    Box,
    InitialLaw,
    MarginalFlow,
    ParticleMeasure,
    PathMeasure,
    TimeGrid,
    Trajectory,
    evaluate_at,
    initial_atoms,
    pushforward_marginals,
    quadrature_particles,
    sample_initial,
    trajectory_box,
    velocities,
)
from mfglab.transport import w1_1d


def linear_measure(slopes, weights, steps=4, T=1.0):
    grid = TimeGrid(T, steps)
    paths = np.array([[[s * t] for t in grid.nodes] for s in slopes])
    return PathMeasure(grid, paths[:, 0], paths, weights)


class TestTypes:
    def test_time_grid_nodes(self):
        g = TimeGrid(2.0, 4)
        np.testing.assert_allclose(g.nodes, [0, 0.5, 1, 1.5, 2])
        assert g.dt == 0.5

    def test_single_step_grid_allowed(self):
        assert TimeGrid(1.0, 1).nodes.tolist() == [0.0, 1.0]

    @pytest.mark.parametrize("T,n", [(0.0, 4), (-1.0, 4), (1.0, 0)])
    def test_time_grid_rejects(self, T, n):
        with pytest.raises(ValueError):
            TimeGrid(T, n)

    def test_particle_measure_normalisation(self):
        with pytest.raises(ValueError):
            ParticleMeasure(np.zeros((2, 1)), [0.5, 0.6])
        with pytest.raises(ValueError):
            ParticleMeasure(np.zeros((2, 1)), [1.5, -0.5])

    def test_path_measure_initial_exactness(self):
        grid = TimeGrid(1.0, 2)
        paths = np.zeros((1, 3, 1))
        with pytest.raises(ValueError):
            PathMeasure(grid, [[1e-15]], paths, [1.0])

    def test_trajectory_finite(self):
        with pytest.raises(ValueError):
            Trajectory(TimeGrid(1.0, 2), [[0.0], [np.nan], [1.0]])

    def test_marginal_flow_slice_normalisation(self):
        grid = TimeGrid(1.0, 1)
        with pytest.raises(ValueError):
            MarginalFlow(grid, np.zeros((2, 2, 1)), np.array([[0.5, 0.5], [0.5, 0.4]]))


class TestEvaluateAt:
    def test_constant_path(self):
        m = linear_measure([0.0], [1.0])
        m = PathMeasure(m.grid, [[0.5]], m.paths + 0.5, [1.0])
        mu = evaluate_at(m, 0.3)
        assert mu.points[0, 0] == 0.5 and mu.weights[0] == 1.0

    def test_linear_paths_at_T(self):
        mu = evaluate_at(linear_measure([1.0, -1.0], [0.5, 0.5]), 1.0)
        np.testing.assert_allclose(mu.points[:, 0], [1.0, -1.0])
        np.testing.assert_allclose(mu.weights, [0.5, 0.5])

    def test_interpolation_between_nodes(self):
        grid = TimeGrid(1.0, 1)
        m = PathMeasure(grid, [[0.0]], [[[0.0], [2.0]]], [1.0])
        assert evaluate_at(m, 0.25).points[0, 0] == pytest.approx(0.5)

    @pytest.mark.parametrize("t", [-0.1, 1.1])
    def test_domain_error(self, t):
        with pytest.raises(ValueError):
            evaluate_at(linear_measure([1.0], [1.0]), t)


class TestPushforward:
    def test_static_measure_has_identical_slices(self):
        grid = TimeGrid(1.0, 3)
        pts = np.array([[0.1], [0.7]])
        paths = np.repeat(pts[:, None], 4, axis=1)
        flow = pushforward_marginals(PathMeasure(grid, pts, paths, [0.3, 0.7]))
        assert all(np.array_equal(flow.points[k], pts) for k in range(4))

    def test_linear_path_slices(self):
        flow = pushforward_marginals(linear_measure([1.0], [1.0], steps=2))
        np.testing.assert_allclose(flow.points[:, 0, 0], [0.0, 0.5, 1.0])

    def test_matches_evaluate_at_exactly(self, rng):
        grid = TimeGrid(1.0, 5)
        paths = rng.normal(size=(7, 6, 2))
        w = rng.random(7)
        m = PathMeasure(grid, paths[:, 0], paths, w / w.sum())
        flow = pushforward_marginals(m)
        for k, t in enumerate(grid.nodes):
            assert np.array_equal(evaluate_at(m, t).points, flow.points[k])
        assert np.all(np.abs(flow.weights.sum(axis=1) - 1) <= 1e-12)


class TestSampling:
    def test_deterministic(self):
        law = InitialLaw.uniform_box([0.0], [1.0])
        assert np.array_equal(sample_initial(law, 3, 7), sample_initial(law, 3, 7))

    def test_truncated_gaussian_inside(self):
        law = InitialLaw.truncated_gaussian([0.0, 1.0], [1.0, 2.0], [-0.5, 0.0], [0.5, 1.5])
        for seed in range(5):
            x = sample_initial(law, 500, seed)
            assert np.all(law.support.contains(x))

    def test_uniform_mean(self):
        x = sample_initial(InitialLaw.uniform_box([0.0], [1.0]), 10**5, 1)
        assert abs(x.mean() - 0.5) < 0.01

    def test_weighted_samples_returns_stored(self):
        law = InitialLaw.weighted_samples([[0.0], [1.0]], [0.25, 0.75])
        assert np.array_equal(sample_initial(law, 2, 0), [[0.0], [1.0]])
        with pytest.raises(ValueError):
            sample_initial(law, 3, 0)

    def test_density_integrates_to_one(self):
        for law in (InitialLaw.uniform_box([-1.0], [2.0]), InitialLaw.truncated_gaussian([0.2], [0.3], [-0.75], [0.75])):
            assert abs(law.total_mass() - 1.0) <= 1e-6


class TestQuadrature:
    def test_uniform_midpoints(self):
        q = quadrature_particles(InitialLaw.uniform_box([0.0], [1.0]), 4)
        np.testing.assert_allclose(q.points[:, 0], [0.125, 0.375, 0.625, 0.875])
        np.testing.assert_allclose(q.weights, 0.25)

    def test_uniform_distance_to_law(self):
        # d1 to the uniform law: 4 cells of width 1/4, each contributing 2 * (1/8)^2 / 2
        q = quadrature_particles(InitialLaw.uniform_box([0.0], [1.0]), 4)
        fine = ParticleMeasure.uniform((np.arange(200_000) + 0.5)[:, None] / 200_000)
        assert w1_1d(q, fine) == pytest.approx(1 / 16, abs=1e-6)

    def test_truncated_gaussian_weights(self):
        q = quadrature_particles(InitialLaw.truncated_gaussian([0.0], [1.0], [-1.0], [1.0]), 100)
        np.testing.assert_allclose(q.weights, 0.01)

    def test_tensor_grid_in_2d(self):
        q = quadrature_particles(InitialLaw.uniform_box([0.0, 0.0], [1.0, 2.0]), 16)
        assert q.points.shape == (16, 2)
        with pytest.raises(ValueError):
            quadrature_particles(InitialLaw.uniform_box([0.0, 0.0], [1.0, 2.0]), 15)

    def test_weighted_samples_unsupported(self):
        law = InitialLaw.weighted_samples([[0.0]])
        with pytest.raises(ValueError):
            quadrature_particles(law, 1)
        assert initial_atoms(law, 5).points.shape == (1, 1)


class TestVelocitiesAndBox:
    def test_constant_path(self):
        tr = Trajectory(TimeGrid(1.0, 3), np.zeros((4, 1)))
        assert np.all(velocities(tr) == 0)

    def test_linear(self):
        g = TimeGrid(1.0, 4)
        np.testing.assert_allclose(velocities(Trajectory(g, 2 * g.nodes[:, None])), 2.0)

    def test_difference_quotient(self):
        tr = Trajectory(TimeGrid(1.0, 2), [[0.0], [1.0], [1.0]])
        np.testing.assert_allclose(velocities(tr)[:, 0], [2.0, 0.0])

    def test_trajectory_box(self):
        b = trajectory_box(InitialLaw.uniform_box([0.0], [1.0]), 1.0, 1.0)
        np.testing.assert_allclose([b.lo[0], b.hi[0]], [-1.0, 2.0])
        b = trajectory_box(InitialLaw.uniform_box([0.0], [1.0]), 0.0, 1.0)
        np.testing.assert_allclose([b.lo[0], b.hi[0]], [0.0, 1.0])
        b = trajectory_box(InitialLaw.uniform_box([-1.0, -1.0], [1.0, 1.0]), 2.0, 0.5)
        np.testing.assert_allclose(np.r_[b.lo, b.hi], [-2, -2, 2, 2])

    def test_box_contains(self):
        b = Box(np.array([0.0]), np.array([1.0]))
        assert b.contains(np.array([[0.5], [1.5]])).tolist() == [True, False]
