import logging

import numpy as np
import pytest
from scipy import integrate
import torch
from torch import nn

from omtps import action, committor, fields, langevin
from omtps.exceptions import ConfigError

# having a class is useful to group tests per operation, but then pylint complains that the methods
# could be a function. this disables that warning.
# pylint:disable=no-self-use

# not really a problem for these test classes
# pylint:disable=too-few-public-methods

# so that usage of fixtures doesn't get flagged
# pylint: disable=redefined-outer-name

# strips at x = 0 and x = 1 of the unit square
STRIPS = committor.RegionSpec(committor.Rectangle((-1.0, -1.0), (0.0, 2.0)),
                              committor.Rectangle((1.0, -1.0), (2.0, 2.0)))


def flat_field():
    return fields.LinearField(np.zeros((2, 2)))


def unit_grid(n=21):
    return committor.GridSpec([0.0, 0.0], [1.0, 1.0], n, n)


def constant_committor(lambda_a=20.0, lambda_b=20.0):
    model = committor.NeuralCommittor(2, hidden_dim=8, n_layers=2, lambda_a=lambda_a,
                                      lambda_b=lambda_b)
    nn.init.zeros_(model.mlp[-1].weight)
    nn.init.zeros_(model.mlp[-1].bias)
    return model


@pytest.fixture(scope='module')
def flat_grid():
    return committor.solve_bke_grid(flat_field(), STRIPS, unit_grid(), kbt=1.0)


@pytest.fixture(scope='module')
def mueller_brown_grid():
    field = fields.MuellerBrownPotential()
    spec = committor.GridSpec.around(field, nx=81, ny=81)
    return field, committor.solve_bke_grid(field, committor.default_regions(field), spec, 1.0)


class TestRegions:
    def test_disk_contains_boundary(self):
        disk = committor.Disk((1.0, 1.0), 0.5)

        np.testing.assert_array_equal(disk.contains([[1.0, 1.5], [1.0, 1.6], [1.2, 0.9]]),
                                      [True, False, True])

    def test_rectangle_contains(self):
        rectangle = committor.Rectangle((0.0, 0.0), (1.0, 2.0))

        np.testing.assert_array_equal(rectangle.contains([[0.5, 2.0], [1.1, 0.5]]), [True, False])

    @pytest.mark.parametrize('a,b', [
        (committor.Disk((0.0, 0.0), 1.0), committor.Disk((1.5, 0.0), 0.6)),
        (committor.Disk((0.0, 0.0), 1.0), committor.Rectangle((0.5, 0.5), (2.0, 2.0))),
        (committor.Rectangle((0.0, 0.0), (1.0, 1.0)), committor.Rectangle((1.0, 0.5), (2.0, 2.0))),
    ])
    def test_intersecting_regions(self, a, b):
        with pytest.raises(ConfigError, match='regions'):
            committor.RegionSpec(a, b)

    def test_disk_near_rectangle_corner(self):
        # the disk reaches both edges' lines but not the corner itself
        result = committor.RegionSpec(committor.Disk((0.0, 0.0), 1.0),
                                      committor.Rectangle((0.8, 0.8), (2.0, 2.0)))

        assert result.a.radius == 1.0

    def test_dict_round_trip(self):
        regions = committor.RegionSpec(committor.Disk((0.0, 1.0), 0.5),
                                       committor.Rectangle((2.0, 2.0), (3.0, 4.0)))

        result = committor.RegionSpec.from_dict(regions.to_dict())

        assert result == regions

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match='region.kind'):
            committor.region_from_dict({'kind': 'ellipse'})

    def test_default_regions_surround_minima(self):
        field = fields.MuellerBrownPotential()

        result = committor.default_regions(field)

        np.testing.assert_array_equal(result.a.center, field.minima()[0])
        np.testing.assert_array_equal(result.b.center, field.minima()[1])
        assert result.a.radius == 2.0


class TestGridSpec:
    def test_nodes(self):
        spec = committor.GridSpec([0.0, 1.0], [2.0, 2.0], 5, 3)

        nodes = spec.nodes()

        assert nodes.shape == (5, 3, 2)
        np.testing.assert_array_equal(nodes[4, 0], [2.0, 1.0])
        assert spec.spacing == (0.5, 0.5)

    @pytest.mark.parametrize('values,field', [
        (dict(lower=[0.0], upper=[1.0]), 'lower'),
        (dict(lower=[1.0, 0.0], upper=[0.0, 1.0]), 'lower'),
        (dict(lower=[0.0, 0.0], upper=[1.0, 1.0], nx=2), 'nx'),
    ])
    def test_invalid(self, values, field):
        with pytest.raises(ConfigError, match=field):
            committor.GridSpec(**values)

    def test_around_covers_minima(self):
        field = fields.MuellerBrownPotential()

        spec = committor.GridSpec.around(field, nx=10, ny=10)

        for minimum in field.minima():
            assert np.all(minimum > spec.lower) and np.all(minimum < spec.upper)


class TestSolveBkeGrid:
    def test_flat_potential_gives_linear_committor(self, flat_grid):
        expected = np.repeat(unit_grid().xs[:, None], 21, axis=1)

        np.testing.assert_allclose(flat_grid.q, expected, atol=1e-10)

    def test_separable_potential_matches_quadrature(self):
        # setup
        stiffness, kbt = 8.0, 0.5
        field = fields.QuadraticWell(2, stiffness=stiffness, center=[0.5, 0.5])
        spec = unit_grid(201)

        # run test
        result = committor.solve_bke_grid(field, STRIPS, spec, kbt)

        # check result
        def inverse_density(x):
            return np.exp(stiffness * (x - 0.5)**2 / (2 * kbt))

        total, _ = integrate.quad(inverse_density, 0.0, 1.0)
        for i in (20, 60, 100, 150):
            partial, _ = integrate.quad(inverse_density, 0.0, spec.xs[i])
            np.testing.assert_allclose(result.q[i], partial / total, atol=1e-3)

    def test_mueller_brown_bounds_and_boundary_values(self, mueller_brown_grid):
        # setup
        field, grid = mueller_brown_grid

        # check result
        assert np.all(grid.q >= 0.0) and np.all(grid.q <= 1.0)
        assert grid.mask_a.any() and grid.mask_b.any()
        np.testing.assert_array_equal(grid.q[grid.mask_a], 0.0)
        np.testing.assert_array_equal(grid.q[grid.mask_b], 1.0)
        minima = field.minima()
        q_a, q_b = grid.interpolate(minima[:2])
        assert (q_a, q_b) == (0.0, 1.0)
        assert grid.transition_band().any()

    @pytest.mark.parametrize('seed', range(100))
    def test_maximum_principle_on_random_surfaces(self, seed):
        # every free node must be a positively weighted average of its neighbours
        # setup
        rng = np.random.default_rng(seed)
        field = fields.GaussianMixtureField([0.5, 0.5], rng.uniform(0.0, 1.0, size=(2, 2)),
                                            rng.uniform(0.1, 0.5))
        kbt = rng.uniform(0.5, 2.0)

        # run test
        grid = committor.solve_bke_grid(field, STRIPS, unit_grid(11), kbt)

        # check result
        q, energies = grid.q, grid.energies
        total, norm = np.zeros_like(q), np.zeros_like(q)
        for axis in (0, 1):
            for shift in (1, -1):
                weight = np.exp(-(np.roll(energies, -shift, axis) - energies) / (2 * kbt))
                edge = [slice(None), slice(None)]
                edge[axis] = -1 if shift == 1 else 0
                weight[tuple(edge)] = 0.0
                total += weight * np.roll(q, -shift, axis)
                norm += weight
        free = ~(grid.mask_a | grid.mask_b)
        assert np.all((q >= 0.0) & (q <= 1.0))
        np.testing.assert_allclose(q[free], (total / norm)[free], atol=1e-7)

    def test_region_without_nodes(self):
        regions = committor.RegionSpec(committor.Disk((0.52, 0.52), 0.01),
                                       committor.Rectangle((1.0, -1.0), (2.0, 2.0)))

        with pytest.raises(ConfigError, match='regions'):
            committor.solve_bke_grid(flat_field(), regions, unit_grid(), 1.0)

    def test_needs_positive_temperature(self):
        with pytest.raises(ConfigError, match='kbt'):
            committor.solve_bke_grid(flat_field(), STRIPS, unit_grid(), 0.0)


class TestCommittorGrid:
    def test_gradient_of_linear_committor(self, flat_grid):
        points = np.random.default_rng(0).uniform(0.05, 0.95, size=(10, 2))

        result = flat_grid.gradient(points)

        np.testing.assert_allclose(result, np.tile([1.0, 0.0], (10, 1)), atol=1e-9)
        np.testing.assert_allclose(flat_grid.interpolate(points), points[:, 0], atol=1e-10)

    def test_points_outside(self, flat_grid):
        with pytest.raises(ConfigError, match='index 1'):
            flat_grid.interpolate([[0.5, 0.5], [1.5, 0.5]])

    def test_values_shape(self):
        with pytest.raises(ConfigError, match='q'):
            committor.CommittorGrid(unit_grid(), np.zeros((3, 3)), STRIPS, 1.0)


class TestRates:
    def test_grid_rate_of_linear_committor(self, flat_grid):
        result = committor.grid_rate(flat_grid, gamma=2.0)

        assert result == pytest.approx(0.5)

    def test_sampled_rate_matches_grid_rate(self, flat_grid):
        samples = committor.WeightedSamples.uniform(
            np.random.default_rng(1).uniform(0.0, 1.0, size=(100, 2)))

        result = committor.estimate_rate(flat_grid, samples, kbt=1.0, gamma=2.0)

        assert result == pytest.approx(0.5)

    def test_mueller_brown_rate_is_positive(self, mueller_brown_grid):
        _, grid = mueller_brown_grid

        result = committor.grid_rate(grid, gamma=1.0)

        assert np.isfinite(result) and result > 0

    def test_mueller_brown_grid_rate_at_default_friction(self):
        # setup
        field = fields.MuellerBrownPotential()
        spec = committor.GridSpec.around(field, nx=200, ny=200)

        # run test
        grid = committor.solve_bke_grid(field, committor.default_regions(field), spec, 1.0)
        result = committor.grid_rate(grid, committor.default_gamma(field))

        # check result
        assert 2.7e-5 <= result <= 1.1e-4

    def test_default_gamma(self):
        assert committor.default_gamma(fields.MuellerBrownPotential()) == 0.125
        assert committor.default_gamma(
            fields.MuellerBrownPotential(centers=((48.0, 8.0), (32.0, 16.0), (24.0, 32.0),
                                                  (16.0, 20.0)))) == 1.0
        assert committor.default_gamma(fields.DoubleWell(2)) == 1.0

    def test_invalid_gamma(self, flat_grid):
        with pytest.raises(ConfigError, match='gamma'):
            committor.grid_rate(flat_grid, 0.0)

    def test_boltzmann_weights(self):
        result = committor.boltzmann_weights([0.0, np.log(2.0), 1000.0], 1.0)

        np.testing.assert_allclose(result, [2 / 3, 1 / 3, 0.0], atol=1e-12)


class TestWeightedSamples:
    def test_uniform(self):
        samples = committor.WeightedSamples.uniform(np.zeros((8, 2)))

        assert len(samples) == 8
        assert samples.effective_size() == pytest.approx(8.0)

    @pytest.mark.parametrize('weights', [[0.5, 0.6], [1.5, -0.5], [1.0]])
    def test_invalid(self, weights):
        with pytest.raises(ConfigError, match='weights'):
            committor.WeightedSamples(np.zeros((2, 2)), weights)


class TestReweight:
    def test_uniform_samples_to_boltzmann(self):
        # setup
        points = np.random.default_rng(2).uniform(-4.0, 4.0, size=(200000, 1))

        # run test
        result = committor.reweight(points, fields.QuadraticWell(1), kbt=1.0)

        # check result
        assert result.weights.sum() == pytest.approx(1.0)
        assert np.all(result.weights >= 0)
        variance = np.sum(result.weights * result.points[:, 0]**2)
        assert variance == pytest.approx(1.0, abs=0.03)

    def test_single_point(self):
        result = committor.reweight([[0.3, 0.4]], fields.QuadraticWell(2), kbt=1.0)

        np.testing.assert_array_equal(result.weights, [1.0])

    def test_no_samples(self):
        with pytest.raises(ConfigError, match='samples'):
            committor.reweight(np.zeros((0, 2)), fields.QuadraticWell(2), kbt=1.0)


class TestSeedSampling:
    def test_no_steps_returns_path_points(self):
        path = action.Path([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]])
        cfg = langevin.SimConfig(dt=0.01, friction=1.0, n_steps=0)

        result = committor.seed_sampling_from_path(path, fields.QuadraticWell(2), cfg)

        np.testing.assert_array_equal(result, path.points)

    def test_replicas_start_on_path(self):
        # setup
        path = action.Path([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]])
        cfg = langevin.SimConfig(dt=0.01, friction=1.0, n_steps=10, n_replicas=5, seed=3)

        # run test
        result = committor.seed_sampling_from_path(path, fields.QuadraticWell(2), cfg)

        # check result
        assert result.shape == (55, 2)
        starts = result[::11]
        np.testing.assert_allclose(starts[:, 0], starts[:, 1])
        assert np.all((starts >= 0.0) & (starts <= 1.0))


class TestNeuralCommittor:
    def test_output_in_unit_interval(self):
        model = committor.NeuralCommittor(2, hidden_dim=8, n_layers=3)

        result = model.values(np.random.default_rng(0).normal(scale=10.0, size=(50, 2)))

        assert np.all((result > 0) & (result < 1))

    def test_loss_of_constant_committor(self):
        # setup
        model = constant_committor()
        points = torch.tensor([[0.0, 0.5], [0.5, 0.5], [1.0, 0.5]], dtype=torch.float64)
        weights = torch.full((3, ), 1 / 3, dtype=torch.float64)
        in_a = torch.tensor([True, False, False])
        in_b = torch.tensor([False, False, True])

        # run test
        result = committor.committor_loss(model, points, weights, in_a, in_b)

        # check result
        assert float(result) == pytest.approx(2 * 20.0 * 0.5 * 0.25)

    def test_loss_drops_empty_subsets(self):
        model = constant_committor(lambda_a=4.0)
        points = torch.zeros((2, 2), dtype=torch.float64)
        weights = torch.full((2, ), 0.5, dtype=torch.float64)
        in_a = torch.tensor([True, True])
        in_b = torch.tensor([False, False])

        result = committor.committor_loss(model, points, weights, in_a, in_b)

        assert float(result) == pytest.approx(4.0 * 0.5 * 0.25)

    def test_gradient_term_domain(self):
        # setup
        model = committor.NeuralCommittor(2, hidden_dim=8, n_layers=2, lambda_a=0.0,
                                          lambda_b=0.0)
        points = torch.tensor([[0.0, 0.5], [0.4, 0.5], [0.6, 0.2], [1.0, 0.5]],
                              dtype=torch.float64)
        weights = torch.tensor([0.1, 0.2, 0.3, 0.4], dtype=torch.float64)
        in_a = torch.tensor([True, False, False, False])
        in_b = torch.tensor([False, False, False, True])
        energy = 0.5 * (torch.as_tensor(model.gradient(points))**2).sum(-1)

        # run test
        everywhere = committor.committor_loss(model, points, weights, in_a, in_b)
        exterior = committor.committor_loss(model, points, weights, in_a, in_b,
                                            gradient_domain=committor.EXTERIOR)

        # check result
        assert float(everywhere) == pytest.approx(float((weights * energy).sum()))
        assert float(exterior) == pytest.approx(
            float((weights[1:3] * energy[1:3]).sum() / weights[1:3].sum()))

    def test_config_defaults(self):
        cfg = committor.CommittorConfig()

        assert cfg.activation == 'sigmoid'
        assert cfg.gradient_domain == committor.ALL_SAMPLES
        with pytest.raises(ConfigError, match='gradient_domain'):
            committor.CommittorConfig(gradient_domain='interior')

    def test_training_is_reproducible(self):
        # setup
        samples = committor.WeightedSamples.uniform(
            np.random.default_rng(3).uniform(0.0, 1.0, size=(200, 2)))
        cfg = committor.CommittorConfig(n_steps=5, batch_size=64, hidden_dim=8, n_layers=2)

        # run test
        first = committor.train_committor(samples, STRIPS, cfg)
        second = committor.train_committor(samples, STRIPS, cfg)

        # check result
        for a, b in zip(first.state_dict().values(), second.state_dict().values()):
            torch.testing.assert_close(a, b, rtol=0, atol=0)

    def test_learns_increasing_committor(self):
        # setup
        points = np.random.default_rng(4).uniform(0.0, 1.0, size=(2000, 2))
        regions = committor.RegionSpec(committor.Rectangle((-1.0, -1.0), (0.1, 2.0)),
                                       committor.Rectangle((0.9, -1.0), (2.0, 2.0)))
        cfg = committor.CommittorConfig(n_steps=300, learning_rate=1e-2, hidden_dim=16,
                                        n_layers=3, activation='tanh')

        # run test
        model = committor.train_committor(committor.WeightedSamples.uniform(points), regions,
                                          cfg)

        # check result
        in_a, in_b = regions.masks(points)
        values = model.values(points)
        assert values[in_b].mean() - values[in_a].mean() > 0.5
        rate = committor.estimate_rate(model, committor.WeightedSamples.uniform(points), 1.0, 1.0)
        assert np.isfinite(rate) and rate > 0

    def test_warns_on_empty_region(self, caplog):
        samples = committor.WeightedSamples.uniform(
            np.random.default_rng(5).uniform(0.2, 0.8, size=(50, 2)))
        cfg = committor.CommittorConfig(n_steps=1, hidden_dim=8, n_layers=2)

        with caplog.at_level(logging.WARNING):
            committor.train_committor(samples, STRIPS, cfg)

        assert 'no training samples in A' in caplog.text
        assert 'no training samples in B' in caplog.text

    @pytest.mark.parametrize('values,field', [
        (dict(n_steps=0), 'n_steps'),
        (dict(learning_rate=-1.0), 'learning_rate'),
        (dict(lambda_a=-1.0), 'lambda_a'),
    ])
    def test_invalid_config(self, values, field):
        with pytest.raises(ConfigError, match=field):
            committor.CommittorConfig(**values)


class TestPersistence:
    def test_grid_round_trip(self, tmp_path, mueller_brown_grid):
        # setup
        field, grid = mueller_brown_grid

        # run test
        committor.save_committor_grid(tmp_path / 'committor_grid.csv', grid)
        result = committor.load_committor_grid(tmp_path / 'committor_grid.csv', field)

        # check result
        np.testing.assert_array_equal(result.q, grid.q)
        assert result.regions == grid.regions
        assert committor.grid_rate(result, 1.0) == committor.grid_rate(grid, 1.0)

    def test_grid_without_field_has_no_rate(self, tmp_path, flat_grid):
        committor.save_committor_grid(tmp_path / 'committor_grid.csv', flat_grid)

        result = committor.load_committor_grid(tmp_path / 'committor_grid.csv')

        with pytest.raises(ConfigError, match='field'):
            committor.grid_rate(result, 1.0)

    def test_neural_round_trip(self, tmp_path):
        # setup
        samples = committor.WeightedSamples.uniform(
            np.random.default_rng(6).uniform(0.0, 1.0, size=(100, 2)))
        cfg = committor.CommittorConfig(n_steps=3, hidden_dim=8, n_layers=2)
        model = committor.train_committor(samples, STRIPS, cfg)

        # run test
        committor.save_neural_committor(tmp_path / 'neural_committor.bin', model)
        result = committor.load_neural_committor(tmp_path / 'neural_committor.bin')

        # check result
        np.testing.assert_array_equal(result.values(samples.points), model.values(samples.points))
        np.testing.assert_array_equal(result.gradient(samples.points),
                                      model.gradient(samples.points))
