"""
Small feed-forward score models trained from scratch: denoising diffusion (DDPM) and flow matching.

Concepts
--------
- latent time tau: DDPM uses integer steps 0..T_d with alpha_bar_0 = 1 (clean data); flow matching
    uses tau in [0, 1] with noise at tau = 0 and data at tau = 1.
- score: grad log p_tau(x). A DDPM noise prediction eps_theta converts to the score as
    -eps_theta / sqrt(1 - alpha_bar_tau); a flow velocity u_theta converts through the closed-form
    affine map in `score_from_velocity`.
- encode / decode: move a point between data space and latent time tau. DDPM encoding adds
    Gaussian noise and decoding runs ancestral sampling; flow encoding and decoding integrate the
    learned velocity with Euler steps and are deterministic.

Everything runs in float64 so that input gradients of the score are accurate enough to drive
path optimization.
"""
from dataclasses import dataclass
import logging
import math

import numpy as np
import pandas as pd
import torch
from torch import nn
from tqdm import tqdm

from .exceptions import (ConfigError, IntegrationError, NumericalError,
                         UnsupportedOperationError)
from .fields import DriftField
from .utils import (DTYPE, DictConfig, as_array, as_tensor, check_finite, config_digest,
                    read_parameter_blob, write_parameter_blob)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

DDPM = 'ddpm'
FLOW = 'flow'
VARIANTS = (DDPM, FLOW)

ACTIVATIONS = {
    'gelu': nn.GELU,
    'silu': nn.SiLU,
    'tanh': nn.Tanh,
    'softplus': nn.Softplus,
    'sigmoid': nn.Sigmoid,
}


class NoiseScheduleDDPM:
    """
    Discrete DDPM noise schedule with a linear beta ramp.

    Arrays are indexed by tau = 0..n_steps; index 0 is the clean data (beta_0 = 0,
    alpha_bar_0 = 1) and beta_1..beta_T ramp linearly from `beta_start` to `beta_end`.
    """
    def __init__(self, n_steps=1000, beta_start=1e-4, beta_end=2e-2):
        if n_steps < 1:
            raise ConfigError(f'must be positive, got {n_steps}', field='n_steps')
        if not 0 < beta_start <= beta_end < 1:
            raise ConfigError(f'need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}',
                              field='beta_start')
        self.n_steps = int(n_steps)
        self.beta_start = float(beta_start)
        self.beta_end = float(beta_end)
        self.betas = np.concatenate([[0.0], np.linspace(beta_start, beta_end, n_steps)])
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)

    def check_tau(self, tau, lower=0):
        if not lower <= tau <= self.n_steps or int(tau) != tau:
            raise ConfigError(f'expected an integer step in [{lower}, {self.n_steps}], got {tau}',
                              field='tau')
        return int(tau)

    def beta(self, tau):
        return float(self.betas[self.check_tau(tau)])

    def alpha(self, tau):
        return float(self.alphas[self.check_tau(tau)])

    def alpha_bar(self, tau):
        return float(self.alpha_bars[self.check_tau(tau)])

    def to_dict(self):
        return {'kind': DDPM, 'n_steps': self.n_steps, 'beta_start': self.beta_start,
                'beta_end': self.beta_end}

    def __repr__(self):
        return (f'NoiseScheduleDDPM(n_steps={self.n_steps}, beta_start={self.beta_start}, '
                f'beta_end={self.beta_end})')


class FlowSchedule:
    """
    Interpolation x_tau = alpha_tau x_1 + sigma_tau x_0 between noise x_0 and data x_1.

    Supported paths are 'linear' (alpha = tau, sigma = 1 - tau) and 'cosine'
    (alpha = sin(pi tau / 2), sigma = cos(pi tau / 2)).
    """
    PATHS = ('linear', 'cosine')

    def __init__(self, path='linear'):
        if path not in self.PATHS:
            raise ConfigError(f'unknown path {path!r}, expected one of {self.PATHS}', field='path')
        self.path = path

    def alpha(self, tau):
        return tau if self.path == 'linear' else math.sin(0.5 * math.pi * tau)

    def sigma(self, tau):
        return 1.0 - tau if self.path == 'linear' else math.cos(0.5 * math.pi * tau)

    def d_alpha(self, tau):
        return 1.0 if self.path == 'linear' else 0.5 * math.pi * math.cos(0.5 * math.pi * tau)

    def d_sigma(self, tau):
        return -1.0 if self.path == 'linear' else -0.5 * math.pi * math.sin(0.5 * math.pi * tau)

    def coefficients(self, tau):
        """Batched (alpha, sigma, d_alpha, d_sigma) for a tensor of times."""
        if self.path == 'linear':
            return tau, 1 - tau, torch.ones_like(tau), -torch.ones_like(tau)
        angle = 0.5 * math.pi * tau
        return (torch.sin(angle), torch.cos(angle), 0.5 * math.pi * torch.cos(angle),
                -0.5 * math.pi * torch.sin(angle))

    def to_dict(self):
        return {'kind': FLOW, 'path': self.path}

    def __repr__(self):
        return f'FlowSchedule(path={self.path!r})'


def schedule_from_dict(values):
    values = dict(values)
    kind = values.pop('kind', None)
    if kind == DDPM:
        return NoiseScheduleDDPM(**values)
    if kind == FLOW:
        return FlowSchedule(**values)
    raise ConfigError(f'unknown schedule kind {kind!r}', field='schedule.kind')


class SinusoidalEmbedding(nn.Module):
    """Sinusoidal features of a time in [0, 1], rescaled by `scale` before the usual frequencies."""
    def __init__(self, dim, scale=1000.0):
        super().__init__()
        if dim < 2 or dim % 2:
            raise ConfigError(f'must be a positive even number, got {dim}', field='embed_dim')
        self.dim = dim
        self.scale = scale
        half = dim // 2
        frequencies = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=DTYPE) / max(half - 1, 1))
        self.register_buffer('frequencies', frequencies, persistent=False)

    def forward(self, t):
        angles = self.scale * t.unsqueeze(-1) * self.frequencies
        return torch.cat([angles.sin(), angles.cos()], dim=-1)


def build_mlp(in_dim, hidden_dim, out_dim, n_layers, activation):
    """A stack of `n_layers` linear layers with `activation` between them."""
    if n_layers < 1:
        raise ConfigError(f'must be positive, got {n_layers}', field='n_layers')
    if activation not in ACTIVATIONS:
        raise ConfigError(f'unknown activation {activation!r}, expected one of '
                          f'{sorted(ACTIVATIONS)}', field='activation')
    widths = [in_dim] + [hidden_dim] * (n_layers - 1) + [out_dim]
    layers = []
    for index, (width_in, width_out) in enumerate(zip(widths[:-1], widths[1:])):
        if index:
            layers.append(ACTIVATIONS[activation]())
        layers.append(nn.Linear(width_in, width_out, dtype=DTYPE))
    return nn.Sequential(*layers)


class FeedForwardNet(nn.Module):
    """
    Time-conditioned MLP mapping (x, t) in R^k x [0, 1] to R^k.

    Inputs are standardised with a fixed affine map (recorded in checkpoints) and concatenated with
    a sinusoidal embedding of t. The last layer starts at zero so the untrained net outputs 0.
    """
    def __init__(self, dim, hidden_dim=256, n_layers=3, embed_dim=32, activation='gelu',
                 input_shift=None, input_scale=None):
        super().__init__()
        self.dim = int(dim)
        self.hidden_dim = int(hidden_dim)
        self.n_layers = int(n_layers)
        self.embed_dim = int(embed_dim)
        self.activation = activation
        self.embedding = SinusoidalEmbedding(self.embed_dim)
        self.mlp = build_mlp(self.dim + self.embed_dim, self.hidden_dim, self.dim, self.n_layers,
                             activation)
        nn.init.zeros_(self.mlp[-1].weight)
        nn.init.zeros_(self.mlp[-1].bias)
        shift = torch.zeros(self.dim, dtype=DTYPE) if input_shift is None else as_tensor(
            input_shift)
        scale = torch.ones(self.dim, dtype=DTYPE) if input_scale is None else as_tensor(input_scale)
        self.register_buffer('input_shift', shift, persistent=False)
        self.register_buffer('input_scale', scale, persistent=False)

    def forward(self, x, t):
        features = torch.cat([(x - self.input_shift) / self.input_scale, self.embedding(t)], dim=-1)
        return self.mlp(features)

    def config(self):
        return {
            'dim': self.dim,
            'hidden_dim': self.hidden_dim,
            'n_layers': self.n_layers,
            'embed_dim': self.embed_dim,
            'activation': self.activation,
            'input_shift': as_array(self.input_shift).tolist(),
            'input_scale': as_array(self.input_scale).tolist(),
        }


@dataclass
class TrainConfig(DictConfig):  # pylint: disable=too-many-instance-attributes
    """
    Training and architecture settings for a score model.

    Parameters
    ----------
    epochs : int
        Passes over the training set
    batch_size : int
        Points per optimizer step
    learning_rate : float
        Adam learning rate
    seed : int
        Seeds parameter initialisation, batching, noising and time sampling
    ema_decay : float, optional
        If set, the returned parameters are an exponential moving average with this decay
    hidden_dim, n_layers, embed_dim, activation
        Network architecture
    standardize : bool
        Standardise network inputs with the training set's mean and standard deviation
    """
    epochs: int = 10
    batch_size: int = 4096
    learning_rate: float = 1e-3
    seed: int = 0
    ema_decay: float = None
    hidden_dim: int = 256
    n_layers: int = 3
    embed_dim: int = 32
    activation: str = 'gelu'
    standardize: bool = True

    def __post_init__(self):
        for name in ('epochs', 'batch_size', 'hidden_dim', 'n_layers', 'embed_dim'):
            if getattr(self, name) < 1:
                raise ConfigError(f'must be positive, got {getattr(self, name)}', field=name)
        if not self.learning_rate > 0:
            raise ConfigError(f'must be positive, got {self.learning_rate}', field='learning_rate')
        if self.ema_decay is not None and not 0 < self.ema_decay < 1:
            raise ConfigError(f'must lie in (0, 1), got {self.ema_decay}', field='ema_decay')
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f'unknown activation {self.activation!r}', field='activation')

    @classmethod
    def mueller_brown(cls, **overrides):
        """10 epochs, batch 4096, learning rate 1e-3, 3 layers of width 256 with GELU."""
        values = dict(epochs=10, batch_size=4096, learning_rate=1e-3)
        values.update(overrides)
        return cls(**values)


class ScoreModel:
    """
    A trained network together with its schedule.

    Parameters
    ----------
    variant : str
        'ddpm' (network predicts the noise) or 'flow' (network predicts the velocity)
    net : FeedForwardNet
    schedule : NoiseScheduleDDPM or FlowSchedule
    seed : int, optional
        Training seed, recorded in checkpoints
    train_digest : str, optional
        Digest of the training configuration
    n_ode_steps : int, optional
        Euler steps over the unit interval for flow encoding and decoding
    """
    def __init__(self, variant, net, schedule, seed=None, train_digest=None, n_ode_steps=100):
        if variant not in VARIANTS:
            raise ConfigError(f'unknown variant {variant!r}, expected one of {VARIANTS}',
                              field='variant')
        expected = NoiseScheduleDDPM if variant == DDPM else FlowSchedule
        if not isinstance(schedule, expected):
            raise ConfigError(f'a {variant} model needs a {expected.__name__}', field='schedule')
        self.variant = variant
        self.net = net
        self.schedule = schedule
        self.seed = seed
        self.train_digest = train_digest
        self.n_ode_steps = n_ode_steps
        self.net.eval()

    @property
    def dim(self):
        return self.net.dim

    def check_tau(self, tau, for_score=False):
        """Validate a latent time; score extraction excludes DDPM step 0 and the flow endpoints."""
        if self.variant == DDPM:
            return self.schedule.check_tau(tau, lower=1 if for_score else 0)
        if for_score and not 0 < tau < 1:
            raise ConfigError(f'flow score needs tau in the open interval (0, 1), got {tau}',
                              field='tau')
        if not 0 <= tau <= 1:
            raise ConfigError(f'expected tau in [0, 1], got {tau}', field='tau')
        return float(tau)

    def _time(self, tau, batch_shape):
        value = tau / self.schedule.n_steps if self.variant == DDPM else tau
        return torch.full(batch_shape, float(value), dtype=DTYPE)

    def predict(self, x, tau):
        """Raw network output (noise for DDPM, velocity for flow) at a batch of points."""
        x = as_tensor(x)
        flat = x.reshape(-1, self.dim)
        out = self.net(flat, self._time(tau, flat.shape[:1]))
        return out.reshape(x.shape)

    def score(self, x, tau):
        """Differentiable score estimate at a batch of points, as a tensor."""
        tau = self.check_tau(tau, for_score=True)
        x = as_tensor(x)
        if self.variant == DDPM:
            return -self.predict(x, tau) / math.sqrt(1.0 - self.schedule.alpha_bar(tau))
        return score_from_velocity(self.predict(x, tau), x, tau, self.schedule)

    def __repr__(self):
        return f'ScoreModel(variant={self.variant!r}, dim={self.dim}, schedule={self.schedule!r})'


class ScoreField(DriftField):
    """
    A learned score at fixed latent time used as a drift field, optionally multiplied by `scale`
    (k_BT turns the score of Boltzmann data into a force).

    DDPM step 0 is evaluated at step 1, the smallest noise level the network was trained on. Has
    neither a potential nor an analytic divergence; path actions use a Hutchinson or exact autograd
    divergence with it.
    """
    kind = 'score'
    has_potential = False
    has_analytic_divergence = False

    def __init__(self, model, tau, units=None, scale=1.0):
        super().__init__(model.dim, units)
        self.model = model
        if model.variant == DDPM and tau == 0:
            logger.debug('DDPM score requested at tau = 0; using step 1')
            tau = 1
        self.tau = model.check_tau(tau, for_score=True)
        if not scale > 0:
            raise ConfigError(f'must be positive, got {scale}', field='scale')
        self.scale = float(scale)

    def drift(self, x):
        x = self.check_point(x)
        score = self.model.score(x, self.tau)
        return score if self.scale == 1.0 else self.scale * score

    def to_config(self):
        return {'kind': self.kind, 'variant': self.model.variant, 'tau': self.tau,
                'scale': self.scale}

    def __repr__(self):
        return f'ScoreField({self.model!r}, tau={self.tau}, scale={self.scale})'


def score_from_velocity(velocity, x, tau, schedule):
    """
    Convert a flow velocity into a score:
    s = alpha / (d_sigma sigma alpha - d_alpha sigma^2) * ((d_alpha / alpha) x - u).

    Raises
    ------
    NumericalError
        If the denominator vanishes at `tau`
    """
    alpha, sigma = schedule.alpha(tau), schedule.sigma(tau)
    d_alpha, d_sigma = schedule.d_alpha(tau), schedule.d_sigma(tau)
    denominator = d_sigma * sigma * alpha - d_alpha * sigma**2
    if abs(denominator) < 1e-12 or alpha == 0:
        raise NumericalError(f'score conversion is singular at tau={tau}',
                             details={'tau': tau, 'denominator': denominator})
    return alpha / denominator * ((d_alpha / alpha) * x - velocity)


def _make_net(data, cfg):
    dim = data.shape[1]
    shift, scale = None, None
    if cfg.standardize and len(data) > 1:
        shift = data.mean(0)
        scale = data.std(0).clamp_min(1e-8)
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        return FeedForwardNet(dim, cfg.hidden_dim, cfg.n_layers, cfg.embed_dim, cfg.activation,
                              shift, scale)


def _check_data(data):
    data = as_tensor(data)
    if data.ndim != 2 or len(data) == 0:
        raise ConfigError('expected a non-empty (n, k) array of points', field='data')
    if not check_finite(data):
        raise ConfigError('training data must be finite', field='data')
    return data


def _fit(net, data, batch_loss, cfg, progress, desc):
    """Adam over shuffled mini-batches; batch_loss(batch, generator) returns a scalar tensor."""
    generator = torch.Generator().manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    ema = None
    if cfg.ema_decay is not None:
        ema = [p.detach().clone() for p in net.parameters()]
    net.train()
    step = 0
    for epoch in tqdm(range(cfg.epochs), disable=not progress, desc=desc):
        order = torch.randperm(len(data), generator=generator)
        losses = []
        for start in range(0, len(data), cfg.batch_size):
            loss = batch_loss(data[order[start:start + cfg.batch_size]], generator)
            if not torch.isfinite(loss):
                logger.error(f'{desc} loss became {loss.item()} at epoch {epoch}, step {step}')
                raise NumericalError(f'non-finite training loss at epoch {epoch}, step {step}',
                                     details={'epoch': epoch, 'step': step})
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if ema is not None:
                with torch.no_grad():
                    for average, param in zip(ema, net.parameters()):
                        average.mul_(cfg.ema_decay).add_(param, alpha=1 - cfg.ema_decay)
            losses.append(loss.item())
            step += 1
        logger.info(f'{desc} epoch {epoch + 1}/{cfg.epochs}: mean loss {np.mean(losses):.6g}')
    if ema is not None:
        with torch.no_grad():
            for average, param in zip(ema, net.parameters()):
                param.copy_(average)
    net.eval()
    return net


def ddpm_train(data, sched, cfg, progress=False):
    """
    Train a noise-prediction network with the DDPM objective E |eps - eps_theta(x_tau, tau)|^2,
    tau uniform over 1..T_d.

    Parameters
    ----------
    data : array-like, shape (n, k)
        Training points
    sched : NoiseScheduleDDPM
    cfg : TrainConfig
    progress : bool, optional
        Show a progress bar over epochs

    Returns
    -------
    model : ScoreModel

    Raises
    ------
    NumericalError
        If the loss becomes non-finite
    """
    data = _check_data(data)
    net = _make_net(data, cfg)
    alpha_bars = as_tensor(sched.alpha_bars)

    def batch_loss(batch, generator):
        tau = torch.randint(1, sched.n_steps + 1, (len(batch),), generator=generator)
        noise = torch.randn(batch.shape, generator=generator, dtype=DTYPE)
        alpha_bar = alpha_bars[tau].unsqueeze(-1)
        noised = alpha_bar.sqrt() * batch + (1 - alpha_bar).sqrt() * noise
        prediction = net(noised, tau.to(DTYPE) / sched.n_steps)
        return ((prediction - noise)**2).sum(-1).mean()

    logger.info(f'training DDPM score model on {len(data)} points of dimension {data.shape[1]}')
    _fit(net, data, batch_loss, cfg, progress, 'ddpm')
    return ScoreModel(DDPM, net, sched, seed=cfg.seed, train_digest=config_digest(cfg.to_dict()))


def flow_train(data, sched, cfg, progress=False):
    """
    Train a velocity network with the conditional flow matching objective
    E |u_theta(x_tau, tau) - (d_alpha x_1 + d_sigma x_0)|^2, tau uniform on [0, 1], x_0 ~ N(0, I).

    See `ddpm_train` for parameters.
    """
    data = _check_data(data)
    net = _make_net(data, cfg)

    def batch_loss(batch, generator):
        tau = torch.rand(len(batch), generator=generator, dtype=DTYPE)
        noise = torch.randn(batch.shape, generator=generator, dtype=DTYPE)
        alpha, sigma, d_alpha, d_sigma = (c.unsqueeze(-1) for c in sched.coefficients(tau))
        target = d_alpha * batch + d_sigma * noise
        prediction = net(alpha * batch + sigma * noise, tau)
        return ((prediction - target)**2).sum(-1).mean()

    logger.info(f'training flow matching model on {len(data)} points of dimension {data.shape[1]}')
    _fit(net, data, batch_loss, cfg, progress, 'flow')
    return ScoreModel(FLOW, net, sched, seed=cfg.seed, train_digest=config_digest(cfg.to_dict()))


def _check_variant(model, variant):
    if model.variant != variant:
        raise ConfigError(f'expected a {variant} model, got {model.variant}', field='variant')


def extract_score_ddpm(model, x, tau):
    """Score -eps_theta(x, tau) / sqrt(1 - alpha_bar_tau) at 1 <= tau <= T_d, as numpy."""
    _check_variant(model, DDPM)
    with torch.no_grad():
        return as_array(model.score(x, tau))


def extract_score_flow(model, x, tau):
    """Score converted from the learned velocity at 0 < tau < 1, as numpy."""
    _check_variant(model, FLOW)
    with torch.no_grad():
        return as_array(model.score(x, tau))


def _normal(shape, rng):
    return torch.randn(shape, generator=rng, dtype=DTYPE)


def _euler(model, x, start, stop):
    """Euler integration of the learned velocity from time `start` to `stop`."""
    n_steps = max(1, int(round(model.n_ode_steps * abs(stop - start))))
    times = np.linspace(start, stop, n_steps + 1)
    for step, (t, t_next) in enumerate(zip(times[:-1], times[1:])):
        x = x + (t_next - t) * model.predict(x, float(t))
        if not check_finite(x):
            raise IntegrationError(f'non-finite state during flow integration at step {step}',
                                   details={'step': step, 'time': float(t)})
    return x


def encode(model, x, tau, rng=None):
    """
    Move data points to latent time tau.

    DDPM: x_tau = sqrt(alpha_bar) x + sqrt(1 - alpha_bar) z with z drawn from `rng` (a
    torch.Generator). Flow: deterministic reverse-time Euler integration from 1 down to tau.

    Returns
    -------
    latent : np.ndarray
        Same shape as `x`
    """
    tau = model.check_tau(tau)
    x = as_tensor(x)
    with torch.no_grad():
        if model.variant == DDPM:
            alpha_bar = model.schedule.alpha_bar(tau)
            if alpha_bar == 1.0:
                return as_array(x)
            return as_array(math.sqrt(alpha_bar) * x
                            + math.sqrt(1 - alpha_bar) * _normal(x.shape, rng))
        return as_array(_euler(model, x, 1.0, tau))


def decode(model, z, tau, rng=None):
    """
    Move latent points at time tau back to data space.

    DDPM: ancestral sampling from tau down to 0,
    x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_theta(x_t, t)) / sqrt(alpha_t)
    + sqrt(beta_t) z,
    without noise at the final step. Flow: forward Euler integration from tau to 1.

    Raises
    ------
    IntegrationError
        If an intermediate state is not finite; the step index is reported
    """
    tau = model.check_tau(tau)
    x = as_tensor(z)
    sched = model.schedule
    with torch.no_grad():
        if model.variant == FLOW:
            return as_array(_euler(model, x, tau, 1.0))
        for t in range(tau, 0, -1):
            eps = model.predict(x, t)
            x = (x - sched.beta(t) / math.sqrt(1 - sched.alpha_bar(t)) * eps) / math.sqrt(
                sched.alpha(t))
            if t > 1:
                x = x + math.sqrt(sched.beta(t)) * _normal(x.shape, rng)
            if not check_finite(x):
                logger.error(f'decoding produced non-finite values at step {t}')
                raise IntegrationError(f'non-finite state while decoding at step {t}',
                                       details={'step': t})
    return as_array(x)


def decode_path(model, latent_path, tau, rng=None):
    """Decode every point of a latent path in one batch. DDPM draws fresh noise per point."""
    return decode(model, np.atleast_2d(as_array(latent_path)), tau, rng)


def sample(model, n, rng=None):
    """Draw n i.i.d. samples by decoding standard normal latents from pure noise."""
    z = _normal((n, model.dim), rng)
    tau = model.schedule.n_steps if model.variant == DDPM else 0.0
    return decode(model, z, tau, rng)


def latent_sde_step(model, x, tau, rng=None):
    """
    One step of the combined denoise-then-noise process at fixed DDPM step tau >= 1:
    x + beta sqrt(1 - alpha_bar_{tau-1}) / sqrt(1 - alpha_bar_tau) s_theta(x, tau)
    + sqrt(2 beta - beta^2) z.
    """
    if model.variant != DDPM:
        raise UnsupportedOperationError('the latent SDE step is defined for DDPM models')
    tau = model.check_tau(tau, for_score=True)
    sched = model.schedule
    beta = sched.beta(tau)
    x = as_tensor(x)
    with torch.no_grad():
        drift_scale = beta * math.sqrt(1 - sched.alpha_bar(tau - 1)) / math.sqrt(
            1 - sched.alpha_bar(tau))
        step = x + drift_scale * model.score(x, tau) + math.sqrt(2 * beta - beta**2) * _normal(
            x.shape, rng)
    return as_array(step)


def boltzmann_cosine_similarity(model, points, field, taus, kbt=1.0):
    """
    Mean cosine similarity between the learned score and the Boltzmann score drift(x) / k_BT
    over `points`, for each latent time in `taus`.

    Returns
    -------
    similarity : pd.Series
        Indexed by tau
    """
    points = as_tensor(points)
    reference = field.drift(points) / kbt
    values = {}
    with torch.no_grad():
        for tau in taus:
            learned = model.score(points, tau)
            values[tau] = float(
                torch.nn.functional.cosine_similarity(learned, reference, dim=-1).mean())
    return pd.Series(values, name='cosine_similarity').rename_axis('tau')


def save_checkpoint(file_path, model):
    """
    Write a model as one UTF-8 JSON header line followed by the little-endian float64 parameters
    in state-dict order.
    """
    header = {
        'format_version': CHECKPOINT_FORMAT_VERSION,
        'variant': model.variant,
        'schedule': model.schedule.to_dict(),
        'net': model.net.config(),
        'seed': model.seed,
        'train_digest': model.train_digest,
        'n_ode_steps': model.n_ode_steps,
    }
    write_parameter_blob(file_path, header, model.net.state_dict())


def load_checkpoint(file_path):
    """Read a model written by `save_checkpoint`."""
    header, state = read_parameter_blob(file_path)
    if header.get('format_version') != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f'unsupported checkpoint format {header.get("format_version")}',
                          field='format_version')
    net = FeedForwardNet(**header['net'])
    net.load_state_dict(state)
    return ScoreModel(header['variant'], net, schedule_from_dict(header['schedule']),
                      seed=header['seed'], train_digest=header['train_digest'],
                      n_ode_steps=header['n_ode_steps'])
