import math
from unittest import mock

import numpy as np
import pytest
import torch
from torch import nn

from omtps import action, fields, models
from omtps.exceptions import ConfigError, UnsupportedOperationError
from omtps.utils import as_array, write_parameter_blob

# having a class is useful to group tests per operation, but then pylint complains that the methods
# could be a function. this disables that warning.
# pylint:disable=no-self-use

# not really a problem for these test classes
# pylint:disable=too-few-public-methods

# so that usage of fixtures doesn't get flagged
# pylint: disable=redefined-outer-name

TINY = dict(epochs=2, batch_size=64, hidden_dim=16, n_layers=2, embed_dim=8)

MIXTURE = fields.GaussianMixtureField([0.3, 0.7], [[-1.0, 0.5], [1.5, -0.5]], 0.2)


def untrained(variant, dim=2):
    net = models.FeedForwardNet(dim, hidden_dim=16, n_layers=2, embed_dim=8)
    schedule = models.NoiseScheduleDDPM() if variant == models.DDPM else models.FlowSchedule()
    return models.ScoreModel(variant, net, schedule)


def scored(variant, dim=2):
    """An untrained model whose output layer is randomised so its score is not identically 0."""
    model = untrained(variant, dim)
    with torch.random.fork_rng():
        torch.manual_seed(0)
        nn.init.normal_(model.net.mlp[-1].weight, std=0.5)
    return model


def generator(seed=0):
    return torch.Generator().manual_seed(seed)


@pytest.fixture(scope='module')
def gaussian_data():
    return np.random.default_rng(0).standard_normal((512, 2))


class TestNoiseScheduleDDPM:
    def test_endpoints(self):
        sched = models.NoiseScheduleDDPM()

        assert sched.beta(0) == 0.0
        assert sched.alpha_bar(0) == 1.0
        assert sched.beta(1) == pytest.approx(1e-4)
        assert sched.beta(1000) == pytest.approx(2e-2)
        assert sched.alpha_bar(1000) == pytest.approx(4e-5, rel=0.1)

    def test_alpha_bar_decreases(self):
        sched = models.NoiseScheduleDDPM(n_steps=50)

        assert np.all(np.diff(sched.alpha_bars) < 0)
        np.testing.assert_allclose(sched.alpha_bars, np.cumprod(sched.alphas))

    @pytest.mark.parametrize('tau', [-1, 1001, 2.5])
    def test_invalid_step(self, tau):
        with pytest.raises(ConfigError, match='tau'):
            models.NoiseScheduleDDPM().alpha_bar(tau)

    def test_invalid_betas(self):
        with pytest.raises(ConfigError):
            models.NoiseScheduleDDPM(beta_start=0.1, beta_end=0.01)

    def test_dict_round_trip(self):
        sched = models.NoiseScheduleDDPM(n_steps=200, beta_start=1e-3, beta_end=5e-2)

        result = models.schedule_from_dict(sched.to_dict())

        np.testing.assert_array_equal(result.alpha_bars, sched.alpha_bars)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match='schedule.kind'):
            models.schedule_from_dict({'kind': 'vp_sde'})


class TestFlowSchedule:
    @pytest.mark.parametrize('path', models.FlowSchedule.PATHS)
    def test_endpoints(self, path):
        sched = models.FlowSchedule(path)

        assert sched.alpha(0.0) == pytest.approx(0.0)
        assert sched.sigma(0.0) == pytest.approx(1.0)
        assert sched.alpha(1.0) == pytest.approx(1.0)
        assert sched.sigma(1.0) == pytest.approx(0.0)

    @pytest.mark.parametrize('path', models.FlowSchedule.PATHS)
    def test_batched_coefficients_match_scalars(self, path):
        sched = models.FlowSchedule(path)
        taus = torch.tensor([0.1, 0.5, 0.9], dtype=torch.float64)

        alpha, sigma, d_alpha, d_sigma = sched.coefficients(taus)

        for index, tau in enumerate(taus.tolist()):
            assert float(alpha[index]) == pytest.approx(sched.alpha(tau))
            assert float(sigma[index]) == pytest.approx(sched.sigma(tau))
            assert float(d_alpha[index]) == pytest.approx(sched.d_alpha(tau))
            assert float(d_sigma[index]) == pytest.approx(sched.d_sigma(tau))

    def test_unknown_path(self):
        with pytest.raises(ConfigError, match='path'):
            models.FlowSchedule('geodesic')


class TestScoreFromVelocity:
    @pytest.mark.parametrize('tau', [0.1, 0.5, 0.8])
    def test_linear_path_gaussian_data(self, tau):
        # for standard normal data the optimal velocity and the score are both linear in x
        # setup
        x = torch.tensor([[0.3, -1.1], [2.0, 0.5]], dtype=torch.float64)
        variance = tau**2 + (1 - tau)**2
        velocity = (2 * tau - 1) / variance * x

        # run test
        result = models.score_from_velocity(velocity, x, tau, models.FlowSchedule('linear'))

        # check result
        torch.testing.assert_close(result, -x / variance)

    @pytest.mark.parametrize('tau', [0.2, 0.6])
    def test_cosine_path_gaussian_data(self, tau):
        x = torch.tensor([[0.7, -0.4]], dtype=torch.float64)

        result = models.score_from_velocity(torch.zeros_like(x), x, tau,
                                            models.FlowSchedule('cosine'))

        torch.testing.assert_close(result, -x)


class TestFeedForwardNet:
    def test_untrained_output_is_zero(self):
        net = models.FeedForwardNet(3, hidden_dim=8, n_layers=3, embed_dim=4)

        result = net(torch.randn(5, 3, dtype=torch.float64), torch.rand(5, dtype=torch.float64))

        assert result.shape == (5, 3)
        assert torch.all(result == 0)

    def test_odd_embedding(self):
        with pytest.raises(ConfigError, match='embed_dim'):
            models.FeedForwardNet(2, embed_dim=7)

    def test_unknown_activation(self):
        with pytest.raises(ConfigError, match='activation'):
            models.build_mlp(2, 8, 2, 2, 'relu6')

    @pytest.mark.parametrize('activation', ['gelu', 'sigmoid'])
    def test_gradients_match_finite_differences(self, activation):
        # setup
        net = models.FeedForwardNet(2, hidden_dim=8, n_layers=3, embed_dim=4,
                                    activation=activation)
        with torch.random.fork_rng():
            torch.manual_seed(1)
            nn.init.normal_(net.mlp[-1].weight, std=0.5)
        names = [name for name, _ in net.named_parameters()]
        values = [p.detach().clone().requires_grad_(True) for p in net.parameters()]
        x = torch.randn(3, 2, dtype=torch.float64, generator=generator(2), requires_grad=True)
        t = torch.full((3, ), 0.3, dtype=torch.float64)

        def forward(points, *parameters):
            return torch.func.functional_call(net, dict(zip(names, parameters)), (points, t))

        # run test / check result
        assert torch.autograd.gradcheck(forward, (x, *values), eps=1e-6, atol=1e-8, rtol=1e-4)


class TestScoreModel:
    def test_variant_schedule_mismatch(self):
        net = models.FeedForwardNet(2, hidden_dim=8, n_layers=2, embed_dim=4)

        with pytest.raises(ConfigError, match='schedule'):
            models.ScoreModel(models.FLOW, net, models.NoiseScheduleDDPM())

    @pytest.mark.parametrize('tau', [0.0, 1.0])
    def test_flow_score_excludes_endpoints(self, tau):
        with pytest.raises(ConfigError, match='tau'):
            models.extract_score_flow(untrained(models.FLOW), [[0.0, 0.0]], tau)

    def test_ddpm_score_excludes_clean_step(self):
        with pytest.raises(ConfigError, match='tau'):
            models.extract_score_ddpm(untrained(models.DDPM), [[0.0, 0.0]], 0)

    def test_extract_checks_variant(self):
        with pytest.raises(ConfigError, match='variant'):
            models.extract_score_ddpm(untrained(models.FLOW), [[0.0, 0.0]], 0.5)

    def test_score_field_is_batched(self):
        field = models.ScoreField(untrained(models.DDPM), 10)

        result = fields.drift(field, np.ones((4, 2)))

        assert result.shape == (4, 2)
        assert not field.has_potential

    def test_ddpm_score_field_at_clean_step_uses_first_step(self):
        model = scored(models.DDPM)
        points = np.random.default_rng(0).normal(size=(4, 2))

        field = models.ScoreField(model, 0)

        assert field.tau == 1
        np.testing.assert_array_equal(fields.drift(field, points),
                                      fields.drift(models.ScoreField(model, 1), points))

    def test_score_field_scale(self):
        model = scored(models.FLOW)
        points = np.random.default_rng(1).normal(size=(4, 2))

        result = fields.drift(models.ScoreField(model, 0.5, scale=2.5), points)

        np.testing.assert_allclose(result,
                                   2.5 * fields.drift(models.ScoreField(model, 0.5), points))
        with pytest.raises(ConfigError, match='scale'):
            models.ScoreField(model, 0.5, scale=0.0)


class TestMixtureOracle:
    # networks replaced by the exact noise or velocity of a Gaussian mixture
    @pytest.mark.parametrize('seed', range(200))
    def test_ddpm_score_matches_noised_mixture(self, seed):
        # setup
        rng = np.random.default_rng(seed)
        model = untrained(models.DDPM)
        tau = int(rng.integers(1, 1001))
        x = rng.normal(scale=2.0, size=(1, 2))
        sqrt_noise = math.sqrt(1 - model.schedule.alpha_bar(tau))

        def exact_noise(points, step):
            return -sqrt_noise * torch.as_tensor(
                fields.mixture_noised_score(MIXTURE, as_array(points), step, model.schedule))

        # run test
        with mock.patch.object(model, 'predict', side_effect=exact_noise):
            result = models.extract_score_ddpm(model, x, tau)

        # check result
        expected = fields.mixture_noised_score(MIXTURE, x, tau, model.schedule)
        np.testing.assert_allclose(result, expected, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize('seed', range(200))
    def test_flow_score_matches_interpolated_mixture(self, seed):
        # setup
        rng = np.random.default_rng(seed)
        model = untrained(models.FLOW)
        sched = model.schedule
        tau = float(rng.uniform(0.05, 0.95))
        x = rng.normal(scale=2.0, size=(1, 2))
        alpha, sigma = sched.alpha(tau), sched.sigma(tau)
        marginal = MIXTURE.affine_marginal(alpha, sigma**2)

        def exact_velocity(points, time):
            score = marginal.drift(points)
            return (sched.d_alpha(time) / alpha * (points + sigma**2 * score)
                    - sched.d_sigma(time) * sigma * score)

        # run test
        with mock.patch.object(model, 'predict', side_effect=exact_velocity):
            result = models.extract_score_flow(model, x, tau)

        # check result
        np.testing.assert_allclose(result, fields.drift(marginal, x), rtol=1e-10, atol=1e-12)

    @pytest.mark.slow
    def test_trained_ddpm_matches_noised_mixture(self):
        # setup
        data = MIXTURE.sample(20000, np.random.default_rng(1))
        cfg = models.TrainConfig(epochs=30, batch_size=512, hidden_dim=64, n_layers=3)
        sched = models.NoiseScheduleDDPM()

        # run test
        model = models.ddpm_train(data, sched, cfg)

        # check result
        rng = np.random.default_rng(2)
        for tau in (200, 400):
            alpha_bar = sched.alpha_bar(tau)
            points = MIXTURE.affine_marginal(math.sqrt(alpha_bar), 1 - alpha_bar).sample(1000, rng)
            learned = models.extract_score_ddpm(model, points, tau)
            expected = fields.mixture_noised_score(MIXTURE, points, tau, sched)
            cosine = (learned * expected).sum(-1) / (np.linalg.norm(learned, axis=-1)
                                                      * np.linalg.norm(expected, axis=-1))
            assert cosine.mean() > 0.95


class TestEncodeDecode:
    def test_ddpm_encode_clean_step_is_identity(self):
        x = np.array([[1.0, 2.0], [-0.5, 0.0]])

        result = models.encode(untrained(models.DDPM), x, 0, generator())

        np.testing.assert_array_equal(result, x)

    def test_ddpm_encode_statistics(self):
        # setup
        model = untrained(models.DDPM)
        x = np.tile([3.0, -1.0], (20000, 1))
        alpha_bar = model.schedule.alpha_bar(300)

        # run test
        result = models.encode(model, x, 300, generator(1))

        # check result
        np.testing.assert_allclose(result.mean(0), math.sqrt(alpha_bar) * x[0], atol=0.03)
        np.testing.assert_allclose(result.std(0), math.sqrt(1 - alpha_bar), rtol=0.03)

    def test_ddpm_decode_is_reproducible_with_generator(self):
        model = untrained(models.DDPM)
        z = np.random.default_rng(0).standard_normal((3, 2))

        first = models.decode(model, z, 50, generator(5))
        second = models.decode(model, z, 50, generator(5))

        np.testing.assert_array_equal(first, second)

    def test_ddpm_decode_single_step_has_no_noise(self):
        # setup
        model = untrained(models.DDPM)
        z = np.array([[0.4, -0.2]])

        # run test
        result = models.decode(model, z, 1, generator())

        # check result
        np.testing.assert_allclose(result, z / math.sqrt(model.schedule.alpha(1)))

    def test_flow_round_trip_with_zero_velocity(self):
        model = untrained(models.FLOW)
        x = np.array([[1.5, -0.5]])

        latent = models.encode(model, x, 0.3)
        result = models.decode(model, latent, 0.3)

        np.testing.assert_array_equal(latent, x)
        np.testing.assert_array_equal(result, x)

    def test_decode_path_keeps_shape(self):
        result = models.decode_path(untrained(models.FLOW), np.zeros((7, 2)), 0.5)

        assert result.shape == (7, 2)

    def test_sample(self):
        result = models.sample(untrained(models.DDPM), 4, generator(2))

        assert result.shape == (4, 2)
        assert np.all(np.isfinite(result))

    def test_latent_sde_step_needs_ddpm(self):
        with pytest.raises(UnsupportedOperationError):
            models.latent_sde_step(untrained(models.FLOW), [[0.0, 0.0]], 0.5)

    def test_latent_sde_step_noise_scale(self):
        # setup
        model = untrained(models.DDPM)
        beta = model.schedule.beta(400)

        # run test
        result = models.latent_sde_step(model, np.zeros((20000, 2)), 400, generator(3))

        # check result
        assert result.std() == pytest.approx(math.sqrt(2 * beta - beta**2), rel=0.03)


class TestTraining:
    @pytest.mark.parametrize('train,schedule', [
        (models.ddpm_train, models.NoiseScheduleDDPM()),
        (models.flow_train, models.FlowSchedule()),
    ])
    def test_same_seed_same_parameters(self, gaussian_data, train, schedule):
        # setup
        cfg = models.TrainConfig(**TINY)

        # run test
        first = train(gaussian_data, schedule, cfg)
        second = train(gaussian_data, schedule, cfg)

        # check result
        for a, b in zip(first.net.state_dict().values(), second.net.state_dict().values()):
            torch.testing.assert_close(a, b, rtol=0, atol=0)
        assert first.train_digest == second.train_digest

    def test_training_moves_parameters(self, gaussian_data):
        model = models.ddpm_train(gaussian_data, models.NoiseScheduleDDPM(),
                                  models.TrainConfig(**TINY))

        assert torch.any(model.net.mlp[-1].weight != 0)

    def test_ema(self, gaussian_data):
        cfg = models.TrainConfig(ema_decay=0.9, **TINY)

        model = models.flow_train(gaussian_data, models.FlowSchedule(), cfg)

        assert all(torch.all(torch.isfinite(p)) for p in model.net.parameters())

    @pytest.mark.parametrize('data', [np.zeros((0, 2)), np.array([[np.nan, 0.0]])])
    def test_bad_data(self, data):
        with pytest.raises(ConfigError, match='data'):
            models.ddpm_train(data, models.NoiseScheduleDDPM(), models.TrainConfig(**TINY))

    @pytest.mark.parametrize('values,field', [
        (dict(epochs=0), 'epochs'),
        (dict(learning_rate=0.0), 'learning_rate'),
        (dict(ema_decay=1.0), 'ema_decay'),
        (dict(activation='relu6'), 'activation'),
    ])
    def test_invalid_config(self, values, field):
        with pytest.raises(ConfigError, match=field):
            models.TrainConfig(**values)

    @pytest.mark.slow
    def test_ddpm_learns_gaussian_score(self):
        # standard normal data stays standard normal under DDPM noising, so the score is -x
        # setup
        data = np.random.default_rng(1).standard_normal((20000, 2))
        cfg = models.TrainConfig(epochs=30, batch_size=512, hidden_dim=64, n_layers=3)

        # run test
        model = models.ddpm_train(data, models.NoiseScheduleDDPM(), cfg)

        # check result
        points = np.random.default_rng(2).uniform(-2, 2, size=(500, 2))
        similarity = models.boltzmann_cosine_similarity(model, points, fields.QuadraticWell(2),
                                                        [50, 200, 500])
        assert list(similarity.index) == [50, 200, 500]
        assert similarity.min() > 0.9

    @pytest.mark.slow
    def test_flow_learns_gaussian_score(self):
        data = np.random.default_rng(1).standard_normal((20000, 2))
        cfg = models.TrainConfig(epochs=30, batch_size=512, hidden_dim=64, n_layers=3)

        model = models.flow_train(data, models.FlowSchedule(), cfg)

        points = np.random.default_rng(2).uniform(-2, 2, size=(500, 2))
        similarity = models.boltzmann_cosine_similarity(model, points, fields.QuadraticWell(2),
                                                        [0.3, 0.5, 0.7])
        assert similarity.min() > 0.9


def mueller_brown_samples(n, seed, kbt=1.0, spacing=0.05):
    """Boltzmann samples of the Mueller-Brown surface drawn from a fine grid with in-cell jitter."""
    field = fields.MuellerBrownPotential()
    lower, upper = fields.padded_bounds(np.concatenate([field.minima(), field.saddles()]), 0.3)
    axes = [np.arange(lo, hi, spacing) for lo, hi in zip(lower, upper)]
    nodes = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, 2)
    energies = fields.potential(field, nodes)
    weights = np.exp(-(energies - energies.min()) / kbt)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(nodes), size=n, p=weights / weights.sum())
    return nodes[picks] + rng.uniform(0.0, spacing, size=(n, 2))


@pytest.fixture(scope='module')
def mueller_brown_models():
    data = mueller_brown_samples(100000, seed=0)
    return [
        models.ddpm_train(
            data, models.NoiseScheduleDDPM(),
            models.TrainConfig(epochs=60, batch_size=1024, hidden_dim=128, n_layers=3, seed=seed))
        for seed in range(3)
    ]


class TestMuellerBrownScore:
    @pytest.mark.slow
    def test_boltzmann_cosine_peaks_above_first_step(self, mueller_brown_models):
        # setup
        field = fields.MuellerBrownPotential()
        points = mueller_brown_samples(2000, seed=100)
        taus = [1, 2, 5, 10, 20, 50, 100]

        for model in mueller_brown_models:
            # run test
            similarity = models.boltzmann_cosine_similarity(model, points, field, taus)

            # check result
            assert similarity.max() > 0.7
            assert similarity.idxmax() > 1

    @pytest.mark.slow
    def test_latent_guess_lowers_straight_line_barrier(self, mueller_brown_models):
        # setup
        field = fields.MuellerBrownPotential()
        minima = field.minima()
        fractions = np.linspace(0.0, 1.0, 50)[:, None]
        straight = action.Path((1 - fractions) * minima[0] + fractions * minima[1])
        reference = action.barrier_energy(field, straight)

        # run test
        barriers = [
            action.barrier_energy(
                field,
                action.initial_guess_latent(mueller_brown_models[0], minima[0], minima[1], 300,
                                            49, generator(seed))) for seed in range(20)
        ]

        # check result
        assert np.all(np.isfinite(barriers))
        assert sum(barrier < reference for barrier in barriers) >= 16


class TestCheckpoint:
    def test_round_trip(self, tmp_path, gaussian_data):
        # setup
        model = models.flow_train(gaussian_data, models.FlowSchedule('cosine'),
                                  models.TrainConfig(**TINY))
        points = np.random.default_rng(3).standard_normal((10, 2))

        # run test
        models.save_checkpoint(tmp_path / 'model.ckpt', model)
        result = models.load_checkpoint(tmp_path / 'model.ckpt')

        # check result
        assert result.variant == models.FLOW
        assert result.schedule.path == 'cosine'
        assert result.train_digest == model.train_digest
        np.testing.assert_array_equal(models.extract_score_flow(result, points, 0.4),
                                      models.extract_score_flow(model, points, 0.4))

    def test_header_is_json_line(self, tmp_path):
        models.save_checkpoint(tmp_path / 'model.ckpt', untrained(models.DDPM))

        with open(tmp_path / 'model.ckpt', 'rb') as f:
            header = f.readline().decode('utf-8')

        assert '"format_version": 1' in header
        assert '"variant": "ddpm"' in header

    def test_unsupported_format(self, tmp_path):
        write_parameter_blob(tmp_path / 'model.ckpt', {'format_version': 99}, {})

        with pytest.raises(ConfigError, match='format_version'):
            models.load_checkpoint(tmp_path / 'model.ckpt')
