"""
Discretized Onsager-Machlup action over paths, its gradient, and the path optimizer.

For a path x^(0..L), timestep dt, friction zeta and diffusivity D the action is

    S = 1 / (2 D) * (A + B + C)
    A = sum_{i=0}^{L-1} |x^(i+1) - x^(i)|^2 / (2 dt)
    B = dt / 2 * sum_{i=1}^{L-1} |Phi(x^(i)) / zeta|^2
    C = D dt * sum_{i=1}^{L-1} sum_c (dPhi_c / dx_c)(x^(i)) / zeta_c

with zeta scalar or one value per coordinate (per particle values are repeated over the particle's
coordinates). The truncated action drops C. At D = 0 the optimizer works on A + B, which has the
same minimizers, and reports that rescaled value.

Endpoints are pinned by zeroing their gradient rows; a spring penalty on the endpoints is available
instead.
"""
from dataclasses import dataclass, field as dataclass_field, replace
import logging
import math
import pathlib

import numpy as np
import torch
from tqdm import tqdm

from .exceptions import ConfigError, NumericalError, UnsupportedOperationError
from .fields import DriftField, potential
from .models import ScoreField, ScoreModel, decode_path, encode
from .utils import (DTYPE, DictConfig, as_array, as_tensor, check_finite, ensure_dir,
                    read_array_csv, read_json, write_array_csv, write_json)

logger = logging.getLogger(__name__)

FULL = 'full'
TRUNCATED = 'truncated'
VARIANTS = (FULL, TRUNCATED)

ANALYTIC = 'analytic'
HUTCHINSON = 'hutchinson'
EXACT = 'exact'
DIVERGENCE_MODES = (ANALYTIC, HUTCHINSON, EXACT)

PROBES = ('gaussian', 'rademacher')

PINNED = 'pinned'
SPRING = 'spring'
ENDPOINT_MODES = (PINNED, SPRING)

OPTIMIZERS = ('adam', 'sgd', 'lbfgs')


@dataclass
class Path:
    """
    A discretized path of L + 1 points in R^k.

    Parameters
    ----------
    points : np.ndarray, shape (L + 1, k)
    dt : float, optional
        Timestep the path was built for, kept as metadata; actions use OMParams.dt
    pin_start, pin_end : bool
        Whether the first and last points are held fixed by the optimizer
    """
    points: np.ndarray
    dt: float = None
    pin_start: bool = True
    pin_end: bool = True

    def __post_init__(self):
        self.points = as_array(self.points)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        if self.points.ndim != 2 or len(self.points) < 2:
            raise ConfigError('a path needs at least two points of shape (k,)', field='points')
        if not check_finite(self.points):
            bad = np.flatnonzero(~np.isfinite(self.points).all(axis=1))
            raise NumericalError(f'path has non-finite points at indices {bad.tolist()}',
                                 details={'indices': bad.tolist()})

    @property
    def n_segments(self):
        """L, the number of segments."""
        return len(self.points) - 1

    @property
    def dim(self):
        return self.points.shape[1]

    def reversed(self):
        return replace(self, points=self.points[::-1].copy(), pin_start=self.pin_end,
                       pin_end=self.pin_start)

    def with_points(self, points):
        return replace(self, points=points)


@dataclass
class OMParams(DictConfig):  # pylint: disable=too-many-instance-attributes
    """
    Constants and options of the Onsager-Machlup action.

    Parameters
    ----------
    dt : float
        Timestep
    zeta : float or list of float
        Friction zeta = gamma * m, scalar or one entry per coordinate or per particle
    diffusivity : float
        D >= 0; FULL requires D > 0
    variant : str
        'full' or 'truncated'
    divergence : str
        'analytic' (field-supplied), 'hutchinson' (stochastic trace) or 'exact' (autograd Jacobian
        diagonal)
    n_probes : int
        Hutchinson probes per evaluation
    probe : str
        'gaussian' or 'rademacher'
    seed : int
        Seed of the probe stream
    endpoint_mode : str
        'pinned' zeroes endpoint gradients, 'spring' adds spring_constant * |x - target|^2 at both
        ends
    spring_constant : float
        Stiffness of the endpoint springs
    """
    dt: float
    zeta: object = 1.0
    diffusivity: float = 1.0
    variant: str = FULL
    divergence: str = ANALYTIC
    n_probes: int = 1
    probe: str = 'gaussian'
    seed: int = 0
    endpoint_mode: str = PINNED
    spring_constant: float = 100.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f'must be positive, got {self.dt}', field='dt')
        zeta = np.atleast_1d(np.asarray(self.zeta, dtype=np.float64))
        if zeta.ndim != 1 or not (zeta > 0).all() or not np.isfinite(zeta).all():
            raise ConfigError(f'must be positive, got {self.zeta}', field='zeta')
        if not self.diffusivity >= 0:
            raise ConfigError(f'must be non-negative, got {self.diffusivity}', field='diffusivity')
        if self.variant not in VARIANTS:
            raise ConfigError(f'unknown variant {self.variant!r}, expected one of {VARIANTS}',
                              field='variant')
        if self.variant == FULL and self.diffusivity == 0:
            raise ConfigError('the full action needs D > 0; use the truncated action at D = 0',
                              field='variant')
        if self.divergence not in DIVERGENCE_MODES:
            raise ConfigError(f'unknown mode {self.divergence!r}, expected one of '
                              f'{DIVERGENCE_MODES}', field='divergence')
        if self.n_probes < 1:
            raise ConfigError(f'must be positive, got {self.n_probes}', field='n_probes')
        if self.probe not in PROBES:
            raise ConfigError(f'unknown probe {self.probe!r}, expected one of {PROBES}',
                              field='probe')
        if self.endpoint_mode not in ENDPOINT_MODES:
            raise ConfigError(f'unknown mode {self.endpoint_mode!r}, expected one of '
                              f'{ENDPOINT_MODES}', field='endpoint_mode')
        if not self.spring_constant > 0:
            raise ConfigError(f'must be positive, got {self.spring_constant}',
                              field='spring_constant')

    @property
    def rescaled(self):
        """True when the reported action is A + B without the 1 / (2 D) prefactor."""
        return self.diffusivity == 0

    @property
    def uniform_zeta(self):
        return np.ndim(self.zeta) == 0 or len(set(np.atleast_1d(self.zeta).tolist())) == 1

    def inverse_zeta(self, dim):
        """1 / zeta for every coordinate of a k-dimensional point."""
        zeta = np.atleast_1d(np.asarray(self.zeta, dtype=np.float64))
        if len(zeta) == 1:
            zeta = np.repeat(zeta, dim)
        elif dim % len(zeta) == 0:
            zeta = np.repeat(zeta, dim // len(zeta))
        else:
            raise ConfigError(f'{len(zeta)} friction values do not divide dimension {dim}',
                              field='zeta')
        return as_tensor(1.0 / zeta)

    def truncated(self):
        return replace(self, variant=TRUNCATED)

    @classmethod
    def latent(cls, schedule, tau, **overrides):
        """Latent SDE constants: zeta = 1, D = 1 and dt = beta_tau."""
        values = dict(dt=schedule.beta(tau), zeta=1.0, diffusivity=1.0)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def physical(cls, dt, friction, mass=1.0, diffusivity=None, kbt=None, **overrides):
        """
        Physical constants: zeta = friction * mass, D either given or k_BT / zeta. `mass` may hold
        one value per particle.
        """
        zeta = (np.asarray(mass, dtype=np.float64) * friction).tolist()
        if diffusivity is None:
            if kbt is None:
                raise ConfigError('give either the diffusivity or k_BT', field='diffusivity')
            diffusivity = kbt / float(np.mean(zeta))
        values = dict(dt=dt, zeta=zeta, diffusivity=diffusivity,
                      variant=FULL if diffusivity > 0 else TRUNCATED)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def mueller_brown(cls, diffusivity=0.0, **overrides):
        """dt = 0.01 and friction 0.01 at unit mass; truncated at D = 0, full otherwise."""
        return cls.physical(0.01, 0.01, diffusivity=diffusivity, **overrides)


@dataclass
class OptimConfig(DictConfig):
    """
    Settings of the path optimizer.

    Parameters
    ----------
    n_steps : int
        Maximum number of optimizer steps K
    learning_rate : float
    optimizer : str
        'adam', 'sgd' (plain gradient descent) or 'lbfgs' (analytic fields only)
    tau_opt : optional
        Latent time of the score used as drift when the provider is a ScoreModel
    tau_initial : optional
        Latent time the initial guess is encoded to
    tolerance : float
        Stop when the relative action change over `window` steps falls below this
    window : int
    """
    n_steps: int = 200
    learning_rate: float = 0.2
    optimizer: str = 'adam'
    tau_opt: object = None
    tau_initial: object = None
    tolerance: float = 1e-6
    window: int = 25

    def __post_init__(self):
        if self.n_steps < 0:
            raise ConfigError(f'must be non-negative, got {self.n_steps}', field='n_steps')
        if not self.learning_rate > 0:
            raise ConfigError(f'must be positive, got {self.learning_rate}',
                              field='learning_rate')
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f'unknown optimizer {self.optimizer!r}, expected one of '
                              f'{OPTIMIZERS}', field='optimizer')
        if not self.tolerance >= 0:
            raise ConfigError(f'must be non-negative, got {self.tolerance}', field='tolerance')
        if self.window < 1:
            raise ConfigError(f'must be positive, got {self.window}', field='window')

    @classmethod
    def mueller_brown(cls, **overrides):
        """200 Adam steps at learning rate 0.2, tau_opt = tau_initial = 8."""
        values = dict(n_steps=200, learning_rate=0.2, optimizer='adam', tau_opt=8, tau_initial=8)
        values.update(overrides)
        return cls(**values)


@dataclass
class OptimResult:
    """
    Outcome of `optimize_path`.

    `path` is the best iterate. `trace` holds the action of every evaluated iterate, starting with
    the initial path. `status` is 'converged', 'max_steps' or 'non_finite'.
    """
    path: Path
    action: float
    trace: list
    status: str
    n_steps: int
    rescaled: bool = False
    diagnostics: dict = dataclass_field(default_factory=dict)

    def metadata(self):
        return {
            'action': self.action,
            'trace': self.trace,
            'status': self.status,
            'n_steps': self.n_steps,
            'rescaled': self.rescaled,
            'diagnostics': self.diagnostics,
        }


def resolve_provider(provider, tau=None):
    """Turn a ScoreModel plus latent time into a ScoreField; pass drift fields through."""
    if isinstance(provider, ScoreModel):
        if tau is None:
            raise ConfigError('a score model needs the latent time it is evaluated at',
                              field='tau_opt')
        return ScoreField(provider, tau)
    if not isinstance(provider, DriftField):
        raise ConfigError(f'expected a drift field or score model, got {type(provider).__name__}',
                          field='provider')
    return provider


def _probes(shape, n_probes, kind, generator):
    if kind == 'rademacher':
        signs = torch.randint(0, 2, (n_probes, ) + tuple(shape), generator=generator)
        return signs.to(DTYPE) * 2 - 1
    return torch.randn((n_probes, ) + tuple(shape), generator=generator, dtype=DTYPE)


def _graph_input(x):
    return x if x.requires_grad else x.detach().requires_grad_(True)


def _hutchinson(field, x, n_probes, generator, probe='gaussian', weights=None,
                create_graph=False):
    """
    Per-point Hutchinson estimates of sum_c w_c dPhi_c/dx_c, averaged over probes, for a batch x of
    shape (n, k). Each probe v contributes (w * v)^T J v via one vector-Jacobian product.
    """
    x = _graph_input(x)
    force = field.drift(x)
    if not force.requires_grad:
        raise UnsupportedOperationError(
            f'{type(field).__name__} does not provide differentiable drifts')
    probes = _probes(x.shape, n_probes, probe, generator)
    estimates = []
    for index, v in enumerate(probes):
        left = v if weights is None else v * weights
        (vjp, ) = torch.autograd.grad(force, x, grad_outputs=left, create_graph=create_graph,
                                      retain_graph=create_graph or index < n_probes - 1)
        estimates.append((vjp * v).sum(-1))
    return torch.stack(estimates).mean(0)


def _jacobian_diagonal(field, x, weights, create_graph=False):
    """Exact sum_c w_c dPhi_c/dx_c per point via one vector-Jacobian product per coordinate."""
    x = _graph_input(x)
    force = field.drift(x)
    if not force.requires_grad:
        raise UnsupportedOperationError(
            f'{type(field).__name__} does not provide differentiable drifts')
    total = torch.zeros(x.shape[:-1], dtype=DTYPE)
    dim = x.shape[-1]
    for c in range(dim):
        basis = torch.zeros_like(x)
        basis[..., c] = 1.0
        (row, ) = torch.autograd.grad(force, x, grad_outputs=basis, create_graph=create_graph,
                                      retain_graph=create_graph or c < dim - 1)
        total = total + weights[c] * row[..., c]
    return total


def hutchinson_divergence(provider, x, n_probes, rng=None, probe='gaussian'):
    """
    Hutchinson estimate (1 / N) sum_j v_j^T (dPhi/dx) v_j of the drift divergence.

    Parameters
    ----------
    provider : omtps.fields.DriftField
        Field with differentiable drift
    x : array-like, shape (k,) or (n, k)
        Point or batch of points
    n_probes : int
        Number of probe vectors N
    rng : torch.Generator, optional
        Probe stream
    probe : str, optional
        'gaussian' or 'rademacher'

    Returns
    -------
    estimate : float or np.ndarray
        One estimate per point

    Raises
    ------
    UnsupportedOperationError
        If the provider's drift is not differentiable
    """
    if n_probes < 1:
        raise ConfigError(f'must be positive, got {n_probes}', field='n_probes')
    x = provider.check_point(x)
    single = x.ndim == 1
    estimate = _hutchinson(provider, x.reshape(-1, provider.dim), n_probes, rng, probe)
    estimate = as_array(estimate)
    return float(estimate[0]) if single else estimate


def _divergence_term(field, interior, params, generator, create_graph):
    inverse_zeta = params.inverse_zeta(field.dim)
    if params.divergence == ANALYTIC:
        if not field.has_analytic_divergence:
            raise UnsupportedOperationError(
                f'{type(field).__name__} has no analytic divergence; use the hutchinson or exact '
                'divergence mode')
        if not params.uniform_zeta:
            raise ConfigError('per-coordinate friction needs the hutchinson or exact divergence '
                              'mode', field='divergence')
        return field.divergence(interior) * inverse_zeta[0]
    if params.divergence == HUTCHINSON:
        return _hutchinson(field, interior, params.n_probes, generator, params.probe,
                           inverse_zeta, create_graph)
    return _jacobian_diagonal(field, interior, inverse_zeta, create_graph)


def _action_terms(points, field, params, generator=None):
    """A, B, C as tensors for a (L + 1, k) tensor of points; C is None for the truncated action."""
    steps = points[1:] - points[:-1]
    kinetic = (steps**2).sum() / (2 * params.dt)
    interior = points[1:-1]
    if len(interior) == 0:
        zero = torch.zeros((), dtype=DTYPE)
        return kinetic, zero, None if params.variant == TRUNCATED else zero
    force = field.drift(interior)
    if not check_finite(force):
        bad = torch.nonzero(~torch.isfinite(force).all(-1)).flatten() + 1
        logger.error(f'non-finite drift at path indices {bad.tolist()}')
        raise NumericalError(f'non-finite drift at path indices {bad.tolist()}',
                             details={'indices': bad.tolist()})
    inverse_zeta = params.inverse_zeta(field.dim)
    drift_term = params.dt / 2 * ((force * inverse_zeta)**2).sum()
    if params.variant == TRUNCATED:
        return kinetic, drift_term, None
    divergence = _divergence_term(field, interior, params, generator, points.requires_grad)
    return kinetic, drift_term, params.diffusivity * params.dt * divergence.sum()


def _combine(kinetic, drift_term, divergence_term, params):
    total = kinetic + drift_term
    if divergence_term is not None:
        total = total + divergence_term
    if params.rescaled:
        return total
    return total / (2 * params.diffusivity)


def _action(points, field, params, generator=None):
    return _combine(*_action_terms(points, field, params, generator), params)


def _check_path(path, field):
    if path.dim != field.dim:
        raise ConfigError(f'path dimension {path.dim} does not match field dimension {field.dim}',
                          field='path')


def _generator(params, rng):
    return rng if rng is not None else torch.Generator().manual_seed(params.seed)


def om_action(path, provider, params, rng=None, tau=None):
    """
    Onsager-Machlup action of a path.

    Parameters
    ----------
    path : Path
    provider : omtps.fields.DriftField or omtps.models.ScoreModel
        Drift provider; a ScoreModel is evaluated at latent time `tau`
    params : OMParams
    rng : torch.Generator, optional
        Probe stream for the Hutchinson divergence; defaults to one seeded with params.seed
    tau : optional
        Latent time for ScoreModel providers

    Returns
    -------
    action : float
        1 / (2 D) (A + B + C), or A + B when D = 0

    Raises
    ------
    NumericalError
        If the drift is non-finite at an interior point, naming the index
    """
    field = resolve_provider(provider, tau)
    _check_path(path, field)
    points = as_tensor(path.points)
    return float(_action(points, field, params, _generator(params, rng)).detach())


def action_terms(path, provider, params, rng=None, tau=None):
    """
    The separate contributions to the action, each without the 1 / (2 D) prefactor.

    Returns
    -------
    terms : dict
        'kinetic' (A), 'drift' (B), 'divergence' (C, None for the truncated action), 'action' and
        'rescaled'
    """
    field = resolve_provider(provider, tau)
    _check_path(path, field)
    points = as_tensor(path.points)
    kinetic, drift_term, divergence_term = _action_terms(points, field, params,
                                                         _generator(params, rng))
    return {
        'kinetic': float(kinetic),
        'drift': float(drift_term),
        'divergence': None if divergence_term is None else float(divergence_term.detach()),
        'action': float(_combine(kinetic, drift_term, divergence_term, params).detach()),
        'rescaled': params.rescaled,
    }


def _pin_mask(path, params):
    mask = torch.ones(len(path.points), 1, dtype=DTYPE)
    if params.endpoint_mode == PINNED:
        if path.pin_start:
            mask[0] = 0.0
        if path.pin_end:
            mask[-1] = 0.0
    return mask


def action_gradient(path, provider, params, rng=None, tau=None):
    """
    Gradient of the action with respect to every path point, with pinned endpoint rows set to
    exactly zero.

    Returns
    -------
    gradient : np.ndarray, shape (L + 1, k)
    """
    field = resolve_provider(provider, tau)
    _check_path(path, field)
    points = as_tensor(path.points).clone().requires_grad_(True)
    action = _action(points, field, params, _generator(params, rng))
    (gradient, ) = torch.autograd.grad(action, points)
    return as_array(gradient * _pin_mask(path, params))


def _make_optimizer(points, params, cfg):
    if cfg.optimizer == 'adam':
        return torch.optim.Adam([points], lr=cfg.learning_rate)
    if cfg.optimizer == 'sgd':
        return torch.optim.SGD([points], lr=cfg.learning_rate)
    if params.variant == FULL and params.divergence == HUTCHINSON:
        raise ConfigError('L-BFGS line searches need a deterministic action; use adam or sgd with '
                          'the hutchinson divergence', field='optimizer')
    return torch.optim.LBFGS([points], lr=cfg.learning_rate, max_iter=1,
                             line_search_fn='strong_wolfe')


def optimize_path(initial, provider, params, cfg, rng=None, tau=None, progress=False):
    """
    Minimize the action over the path's free points.

    Parameters
    ----------
    initial : Path
        Starting path; its pinned endpoints are kept bitwise
    provider : omtps.fields.DriftField or omtps.models.ScoreModel
        Drift provider; a ScoreModel is evaluated at `tau`, else at `cfg.tau_opt`
    params : OMParams
    cfg : OptimConfig
    rng : torch.Generator, optional
        Probe stream; fresh probes are drawn at every evaluation
    progress : bool, optional
        Show a progress bar over steps

    Returns
    -------
    result : OptimResult
        The best iterate with the action trace. A non-finite action stops the run with status
        'non_finite' and the best finite iterate.
    """
    field = resolve_provider(provider, cfg.tau_opt if tau is None else tau)
    _check_path(initial, field)
    generator = _generator(params, rng)
    targets = as_tensor(initial.points[[0, -1]]).clone()
    points = as_tensor(initial.points).clone().requires_grad_(True)
    mask = _pin_mask(initial, params)
    optimizer = _make_optimizer(points, params, cfg)

    def objective():
        value = _action(points, field, params, generator)
        if params.endpoint_mode == SPRING:
            value = value + params.spring_constant * ((points[[0, -1]] - targets)**2).sum()
        return value

    def closure():
        optimizer.zero_grad()
        value = objective()
        if torch.isfinite(value):
            value.backward()
            points.grad.mul_(mask)
        return value

    def pin():
        with torch.no_grad():
            if mask[0, 0] == 0:
                points[0] = targets[0]
            if mask[-1, 0] == 0:
                points[-1] = targets[1]

    trace = []
    best_points, best_value = initial.points.copy(), math.inf
    status = 'max_steps'
    diagnostics = {}
    step = 0
    for step in tqdm(range(cfg.n_steps + 1), disable=not progress, desc='optimize'):
        current = points.detach().numpy().copy()
        if step == cfg.n_steps:
            value = objective().item()
        elif cfg.optimizer == 'lbfgs':
            value = optimizer.step(closure).item()
        else:
            value = closure().item()
        if not math.isfinite(value):
            logger.error(f'action became {value} at step {step}; keeping the best finite iterate')
            status = 'non_finite'
            diagnostics = {'step': step, 'value': str(value)}
            break
        trace.append(value)
        if value < best_value:
            best_points, best_value = current, value
        if len(trace) > cfg.window:
            previous = trace[-1 - cfg.window]
            if abs(value - previous) <= cfg.tolerance * max(abs(previous), 1e-300):
                status = 'converged'
                break
        if step == cfg.n_steps:
            break
        if cfg.optimizer != 'lbfgs':
            optimizer.step()
        pin()
        if not check_finite(points):
            logger.error(f'optimizer produced non-finite points at step {step}')
            status = 'non_finite'
            diagnostics = {'step': step + 1}
            break

    if status == 'max_steps' and cfg.n_steps > 0:
        logger.warning(f'path optimization stopped after {cfg.n_steps} steps without converging '
                       f'(action {best_value:.6g})')
    elif status == 'converged':
        logger.info(f'path optimization converged after {step} steps (action {best_value:.6g})')
    best_path = initial.with_points(best_points)
    if not math.isfinite(best_value):
        raise NumericalError('the initial path has a non-finite action', details=diagnostics)
    return OptimResult(path=best_path, action=best_value, trace=trace, status=status,
                       n_steps=step, rescaled=params.rescaled, diagnostics=diagnostics)


def barrier_energy(field, path):
    """
    Highest potential energy over the points of a path.

    Raises
    ------
    UnsupportedOperationError
        If the field has no potential
    """
    if not field.has_potential:
        raise UnsupportedOperationError(f'{type(field).__name__} has no potential')
    _check_path(path, field)
    return float(potential(field, path.points).max())


def kabsch_transform(reference, moving):
    """
    Proper rotation R and translation t minimizing |moving R^T + t - reference|.

    Parameters
    ----------
    reference, moving : array-like, shape (n, d)

    Returns
    -------
    rotation : np.ndarray, shape (d, d)
        det(rotation) = +1; the identity when the centred covariance vanishes
    translation : np.ndarray, shape (d,)
    """
    reference, moving = np.atleast_2d(as_array(reference)), np.atleast_2d(as_array(moving))
    if reference.shape != moving.shape or len(reference) == 0:
        raise ConfigError(f'point sets must have equal non-empty shapes, got {reference.shape} '
                          f'and {moving.shape}', field='moving')
    ref_center, mov_center = reference.mean(0), moving.mean(0)
    covariance = (moving - mov_center).T @ (reference - ref_center)
    u, s, vt = np.linalg.svd(covariance)
    if s.max(initial=0.0) < 1e-12:
        rotation = np.eye(reference.shape[1])
    else:
        correction = np.ones(reference.shape[1])
        correction[-1] = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
        rotation = vt.T @ np.diag(correction) @ u.T
    return rotation, ref_center - mov_center @ rotation.T


def kabsch_align(reference, moving):
    """Superpose `moving` onto `reference` by the optimal proper rotation and translation."""
    rotation, translation = kabsch_transform(reference, moving)
    return np.atleast_2d(as_array(moving)) @ rotation.T + translation


def rmsd(a, b):
    return float(np.sqrt(((np.asarray(a) - np.asarray(b))**2).sum(-1).mean()))


def initial_guess_latent(model, x0, xL, tau_initial, L, rng=None, decode_to_data=True,
                         repin=True, particle_dim=None):
    """
    Initial path by linear interpolation in latent space.

    The endpoints are encoded to `tau_initial`, interpolated as
    z^(i) = (1 - i / L) z^(0) + (i / L) z^(L), and decoded back to data space unless
    `decode_to_data` is False. With `particle_dim`, xL is Kabsch-aligned onto x0 first, treating
    each point as particles of that dimension.

    Returns
    -------
    path : Path
        L + 1 points; decoded endpoints are replaced by x0 and (aligned) xL when `repin` is set
    """
    if L < 1:
        raise ConfigError(f'must be positive, got {L}', field='L')
    x0, xL = as_array(x0), as_array(xL)
    if x0.shape != (model.dim, ) or xL.shape != (model.dim, ):
        raise ConfigError(f'endpoints must have dimension {model.dim}', field='endpoints')
    if particle_dim:
        xL = kabsch_align(x0.reshape(-1, particle_dim), xL.reshape(-1, particle_dim)).reshape(-1)
    latents = encode(model, np.stack([x0, xL]), tau_initial, rng)
    fractions = np.linspace(0.0, 1.0, L + 1)[:, None]
    latent_path = (1 - fractions) * latents[0] + fractions * latents[1]
    if not decode_to_data:
        return Path(latent_path)
    try:
        points = decode_path(model, latent_path, tau_initial, rng)
    except NumericalError as ex:
        raise NumericalError(f'decoding the initial guess failed: {ex}', details=ex.details) from ex
    if repin:
        points[0], points[-1] = x0, xL
    return Path(points)


def initial_guess_unwrap(x0, xL, L1, N, provider, params, cfg, tau=None, progress=False):
    """
    Initial path by iterative unwrapping.

    Starts from L1 points, the first half at x0 and the second at xL. Each of N rounds duplicates
    every point and minimizes the truncated action, so the result has L1 * 2^N points.

    Raises
    ------
    NumericalError
        If a stage's optimization hits a non-finite action, naming the stage
    """
    if L1 < 2 or L1 % 2:
        raise ConfigError(f'must be an even number >= 2, got {L1}', field='L1')
    if N < 0:
        raise ConfigError(f'must be non-negative, got {N}', field='N')
    x0, xL = np.atleast_1d(as_array(x0)), np.atleast_1d(as_array(xL))
    points = np.concatenate([np.repeat(x0[None], L1 // 2, 0), np.repeat(xL[None], L1 // 2, 0)])
    path = Path(points)
    stage_params = params.truncated()
    for stage in range(N):
        path = path.with_points(np.repeat(path.points, 2, axis=0))
        result = optimize_path(path, provider, stage_params, cfg, tau=tau, progress=progress)
        if result.status == 'non_finite':
            raise NumericalError(f'unwrapping stage {stage} hit a non-finite action',
                                 details=dict(result.diagnostics, stage=stage))
        logger.info(f'unwrapping stage {stage + 1}/{N}: {len(result.path.points)} points, '
                    f'action {result.trace[0]:.6g} -> {result.action:.6g}')
        path = result.path
    return path


def sample_transition_paths(model, x0, xL, params, cfg, L, n_paths, seed=0, latent=True,
                            progress=False):
    """
    Sample diverse transition paths with a score model.

    For each replicate a latent initial guess is built at `cfg.tau_initial` with its own seed,
    optimized with the model's score at `cfg.tau_opt`, and, when optimizing in latent space,
    decoded back to data space with endpoints re-pinned. Stochastic DDPM encoding and decoding make
    the replicates differ.

    Returns
    -------
    results : list of OptimResult
        One per replicate; `path` holds data-space points
    """
    if n_paths < 1:
        raise ConfigError(f'must be positive, got {n_paths}', field='n_paths')
    if cfg.tau_initial is None or cfg.tau_opt is None:
        raise ConfigError('tau_initial and tau_opt are required', field='tau_initial')
    results = []
    for replicate in range(n_paths):
        rng = torch.Generator().manual_seed(seed + replicate)
        guess = initial_guess_latent(model, x0, xL, cfg.tau_initial, L, rng,
                                     decode_to_data=not latent)
        result = optimize_path(guess, model, replace(params, seed=params.seed + replicate), cfg,
                               rng=rng, tau=cfg.tau_opt, progress=progress)
        if latent:
            points = decode_path(model, result.path.points, cfg.tau_initial, rng)
            points[0], points[-1] = as_array(x0), as_array(xL)
            result.path = result.path.with_points(points)
        results.append(result)
    return results


def coordinate_columns(dim):
    return [f'x{i}' for i in range(dim)]


def save_path(file_path, path, metadata=None):
    """Write a path as CSV (one row per point) with a JSON sidecar."""
    metadata = dict(metadata or {})
    metadata.update({'dt': path.dt, 'pin_start': path.pin_start, 'pin_end': path.pin_end})
    return write_array_csv(file_path, path.points, coordinate_columns(path.dim),
                           index_label='point', metadata=metadata)


def load_path(file_path):
    """
    Read a path written by `save_path`.

    Returns
    -------
    path : Path
    metadata : dict
    """
    points, metadata = read_array_csv(file_path, index_col='point')
    metadata = metadata or {}
    path = Path(points, dt=metadata.get('dt'), pin_start=metadata.get('pin_start', True),
                pin_end=metadata.get('pin_end', True))
    return path, metadata


BUNDLE_INDEX = 'bundle.json'


def save_bundle(directory, results, params, cfg, extra=None):
    """
    Write replicate paths into a directory: path_000.csv, ... with sidecars and a bundle index.

    Returns
    -------
    written : list of pathlib.Path
    """
    directory = ensure_dir(directory)
    written = []
    for index, result in enumerate(results):
        metadata = dict(result.metadata(), om_params=params.to_dict(), optim_config=cfg.to_dict())
        written += save_path(directory / f'path_{index:03d}.csv', result.path, metadata)
    index_path = directory / BUNDLE_INDEX
    write_json(index_path, dict(extra or {}, n_paths=len(results), om_params=params.to_dict(),
                                optim_config=cfg.to_dict(),
                                actions=[result.action for result in results]))
    return written + [index_path]


def load_bundle(directory):
    """Read the paths of a bundle written by `save_bundle`, in replicate order."""
    directory = pathlib.Path(directory)
    index = read_json(directory / BUNDLE_INDEX)
    return [load_path(directory / f'path_{i:03d}.csv')[0] for i in range(index['n_paths'])], index
