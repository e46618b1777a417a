"""
Committor functions and transition rates for two dimensional systems.

Concepts
--------
- regions: reactant A and product B, disjoint disks or rectangles
- committor q(x): probability that dynamics started at x reach B before A. It solves the backward
    Kolmogorov equation div(exp(-U / k_BT) grad q) = 0 with q = 0 on A and q = 1 on B.
- rate: k = (k_BT / gamma) <|grad q|^2> under the Boltzmann distribution
- grid committor: finite-difference solution of the backward Kolmogorov equation on a uniform grid
    with a reflecting outer boundary, used as ground truth
- neural committor: a sigmoid-output MLP fitted by minimizing the variational form of the same
    equation over (reweighted) samples
"""
from dataclasses import dataclass
import logging

import numpy as np
from scipy import interpolate, sparse
from scipy.sparse import linalg as sparse_linalg
import torch
from torch import nn
from tqdm import tqdm

from .exceptions import ConfigError, NumericalError
from .fields import padded_bounds, potential
from .langevin import pool_states, simulate
from .models import build_mlp
from .utils import (DTYPE, DictConfig, as_array, as_tensor, read_array_csv, read_parameter_blob,
                    write_array_csv, write_parameter_blob)

logger = logging.getLogger(__name__)

# exponents of the Boltzmann link weights are clipped to this magnitude
MAX_EXPONENT = 300.0

# friction at which the grid rate between the default Mueller-Brown regions at k_BT = 1 is 5.4e-5
MUELLER_BROWN_GAMMA = 0.125

ALL_SAMPLES = 'all'
EXTERIOR = 'exterior'
GRADIENT_DOMAINS = (ALL_SAMPLES, EXTERIOR)


@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError(f'must be positive, got {self.radius}', field='radius')
        object.__setattr__(self, 'center', tuple(float(c) for c in self.center))

    def contains(self, points):
        points = np.asarray(points, dtype=np.float64)
        return np.linalg.norm(points - np.asarray(self.center), axis=-1) <= self.radius

    def to_dict(self):
        return {'kind': 'disk', 'center': list(self.center), 'radius': self.radius}


@dataclass(frozen=True)
class Rectangle:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        object.__setattr__(self, 'lower', tuple(float(c) for c in self.lower))
        object.__setattr__(self, 'upper', tuple(float(c) for c in self.upper))
        if not all(lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise ConfigError('lower corner must lie below the upper corner', field='lower')

    def contains(self, points):
        points = np.asarray(points, dtype=np.float64)
        return np.all((points >= self.lower) & (points <= self.upper), axis=-1)

    def to_dict(self):
        return {'kind': 'rectangle', 'lower': list(self.lower), 'upper': list(self.upper)}


def region_from_dict(values):
    values = dict(values)
    kind = values.pop('kind', None)
    if kind == 'disk':
        return Disk(**values)
    if kind == 'rectangle':
        return Rectangle(**values)
    raise ConfigError(f'unknown region kind {kind!r}', field='region.kind')


def _overlap(first, second):
    if isinstance(first, Rectangle) and isinstance(second, Disk):
        first, second = second, first
    if isinstance(first, Disk) and isinstance(second, Disk):
        return np.linalg.norm(np.subtract(first.center, second.center)) <= (first.radius
                                                                             + second.radius)
    if isinstance(first, Disk):
        closest = np.clip(first.center, second.lower, second.upper)
        return np.linalg.norm(closest - np.asarray(first.center)) <= first.radius
    return all(lo1 <= hi2 and lo2 <= hi1 for lo1, hi1, lo2, hi2 in zip(
        first.lower, first.upper, second.lower, second.upper))


@dataclass(frozen=True)
class RegionSpec:
    """Reactant region `a` and product region `b`; they must not intersect."""
    a: object
    b: object

    def __post_init__(self):
        if _overlap(self.a, self.b):
            raise ConfigError('regions A and B intersect', field='regions')

    def masks(self, points):
        return self.a.contains(points), self.b.contains(points)

    def to_dict(self):
        return {'a': self.a.to_dict(), 'b': self.b.to_dict()}

    @classmethod
    def from_dict(cls, values):
        return cls(region_from_dict(values['a']), region_from_dict(values['b']))


def default_regions(field, radius=2.0):
    """Disks of radius `radius` around the deepest (A) and second deepest (B) minima of a field."""
    minima = field.minima()
    if len(minima) < 2:
        raise ConfigError('the field has fewer than two minima', field='field')
    return RegionSpec(Disk(minima[0], radius), Disk(minima[1], radius))


def default_gamma(field):
    """
    Friction of the rate prefactor: MUELLER_BROWN_GAMMA on the default Mueller-Brown surface,
    1 otherwise.
    """
    if field.kind == 'mueller_brown' and field.to_config() == type(field)().to_config():
        return MUELLER_BROWN_GAMMA
    return 1.0


@dataclass
class GridSpec(DictConfig):
    """Uniform nx by ny grid over the box [lower, upper]."""
    lower: list
    upper: list
    nx: int = 400
    ny: int = 400

    def __post_init__(self):
        self.lower = [float(v) for v in self.lower]
        self.upper = [float(v) for v in self.upper]
        if len(self.lower) != 2 or len(self.upper) != 2:
            raise ConfigError('grids are two dimensional', field='lower')
        if not all(lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise ConfigError('lower corner must lie below the upper corner', field='lower')
        if self.nx < 3 or self.ny < 3:
            raise ConfigError('need at least 3 nodes per axis', field='nx')

    @property
    def xs(self):
        return np.linspace(self.lower[0], self.upper[0], self.nx)

    @property
    def ys(self):
        return np.linspace(self.lower[1], self.upper[1], self.ny)

    @property
    def spacing(self):
        return ((self.upper[0] - self.lower[0]) / (self.nx - 1),
                (self.upper[1] - self.lower[1]) / (self.ny - 1))

    def nodes(self):
        """Node coordinates of shape (nx, ny, 2)."""
        return np.stack(np.meshgrid(self.xs, self.ys, indexing='ij'), axis=-1)

    @classmethod
    def around(cls, field, pad=0.1, nx=400, ny=400):
        """Box spanning a field's minima and saddles, padded by `pad` of its extent."""
        lower, upper = padded_bounds(np.concatenate([field.minima(), field.saddles()]), pad)
        return cls(lower.tolist(), upper.tolist(), nx, ny)


class CommittorGrid:
    """
    Committor values on the nodes of a GridSpec, indexed q[i, j] at (xs[i], ys[j]).
    """
    def __init__(self, spec, q, regions, kbt, energies=None):
        self.spec = spec
        self.q = np.asarray(q, dtype=np.float64)
        if self.q.shape != (spec.nx, spec.ny):
            raise ConfigError(f'expected values of shape {(spec.nx, spec.ny)}', field='q')
        self.regions = regions
        self.kbt = kbt
        self.energies = energies
        self.mask_a, self.mask_b = regions.masks(spec.nodes())
        self._interpolators = None

    def _build_interpolators(self):
        if self._interpolators is None:
            grad_x, grad_y = np.gradient(self.q, *self.spec.spacing, edge_order=2)
            axes = (self.spec.xs, self.spec.ys)
            self._interpolators = [
                interpolate.RegularGridInterpolator(axes, values, bounds_error=False)
                for values in (self.q, grad_x, grad_y)
            ]
        return self._interpolators

    def _check_inside(self, points):
        points = np.atleast_2d(as_array(points))
        inside = np.all((points >= self.spec.lower) & (points <= self.spec.upper), axis=-1)
        if not inside.all():
            index = int(np.flatnonzero(~inside)[0])
            raise ConfigError(f'point {points[index].tolist()} (index {index}) lies outside the '
                              'grid', field='samples')
        return points

    def interpolate(self, points):
        """Bilinear committor values at points inside the grid."""
        return self._build_interpolators()[0](self._check_inside(points))

    def gradient(self, points):
        """Committor gradient from central differences, interpolated to the points."""
        points = self._check_inside(points)
        _, grad_x, grad_y = self._build_interpolators()
        return np.stack([grad_x(points), grad_y(points)], axis=-1)

    def transition_band(self, low=0.2, high=0.8):
        """Mask of nodes with low <= q <= high."""
        return (self.q >= low) & (self.q <= high)

    def metadata(self):
        return {'lower': self.spec.lower, 'upper': self.spec.upper, 'nx': self.spec.nx,
                'ny': self.spec.ny, 'regions': self.regions.to_dict(), 'kbt': self.kbt}


def solve_bke_grid(field, regions, grid_spec, kbt, tolerance=1e-8):
    """
    Solve the backward Kolmogorov equation for the committor on a uniform grid.

    The equation div(exp(-U / k_BT) grad q) = 0 is discretized with a conservative 5-point stencil:
    each link between neighbouring nodes i, j carries the weight exp(-(U_j - U_i) / (2 k_BT)) / h^2
    in the row of node i. Links leaving the grid are omitted, which makes the outer boundary
    reflecting. A and B nodes are Dirichlet nodes with q = 0 and q = 1.

    Parameters
    ----------
    field : omtps.fields.DriftField
        Two dimensional field with a potential
    regions : RegionSpec
    grid_spec : GridSpec
    kbt : float
        Thermal energy, > 0
    tolerance : float, optional
        Largest accepted relative residual of the linear solve

    Returns
    -------
    grid : CommittorGrid

    Raises
    ------
    ConfigError
        If a region holds no grid node
    NumericalError
        If the relative residual exceeds `tolerance`
    """
    if not kbt > 0:
        raise ConfigError(f'must be positive, got {kbt}', field='kbt')
    if field.dim != 2:
        raise ConfigError('grid committors are two dimensional', field='field')
    nodes = grid_spec.nodes()
    energies = potential(field, nodes)
    mask_a, mask_b = regions.masks(nodes)
    if not mask_a.any() or not mask_b.any():
        raise ConfigError('regions A and B must each contain at least one grid node',
                          field='regions')
    nx, ny = grid_spec.nx, grid_spec.ny
    known = mask_a | mask_b
    unknown_index = -np.ones((nx, ny), dtype=np.int64)
    unknown_index[~known] = np.arange(np.count_nonzero(~known))
    n_unknown = np.count_nonzero(~known)
    boundary = mask_b.astype(np.float64)
    hx, hy = grid_spec.spacing

    rows, cols, values = [], [], []
    rhs = np.zeros(n_unknown)
    diagonal = np.zeros(n_unknown)
    for axis, shift, h in ((0, 1, hx), (0, -1, hx), (1, 1, hy), (1, -1, hy)):
        here = [slice(None), slice(None)]
        there = [slice(None), slice(None)]
        size = nx if axis == 0 else ny
        here[axis] = slice(max(0, -shift), size - max(0, shift))
        there[axis] = slice(max(0, shift), size - max(0, -shift))
        here, there = tuple(here), tuple(there)
        exponent = np.clip(-(energies[there] - energies[here]) / (2 * kbt), -MAX_EXPONENT,
                           MAX_EXPONENT)
        weight = np.exp(exponent) / h**2
        source = unknown_index[here]
        target = unknown_index[there]
        active = source >= 0
        np.add.at(diagonal, source[active], -weight[active])
        coupled = active & (target >= 0)
        rows.append(source[coupled])
        cols.append(target[coupled])
        values.append(weight[coupled])
        fixed = active & (target < 0)
        np.add.at(rhs, source[fixed], -weight[fixed] * boundary[there][fixed])

    rows.append(np.arange(n_unknown))
    cols.append(np.arange(n_unknown))
    values.append(diagonal)
    matrix = sparse.csr_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_unknown, n_unknown))
    logger.info(f'solving committor on a {nx}x{ny} grid with {n_unknown} unknowns')
    solution = sparse_linalg.spsolve(matrix.tocsc(), rhs)
    residual = np.linalg.norm(matrix @ solution - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not np.isfinite(residual) or residual > tolerance:
        logger.error(f'committor solve residual {residual:.3g} exceeds {tolerance:.3g}')
        raise NumericalError(f'committor linear solve did not converge (residual {residual:.3g})',
                             details={'residual': float(residual)})
    logger.info(f'committor solve relative residual {residual:.3g}')

    q = boundary.copy()
    q[~known] = solution
    return CommittorGrid(grid_spec, np.clip(q, 0.0, 1.0), regions, kbt, energies)


def boltzmann_weights(energies, kbt):
    """Normalized exp(-U / k_BT), computed in log space."""
    log_weights = -np.asarray(energies, dtype=np.float64) / kbt
    weights = np.exp(log_weights - log_weights.max())
    return weights / weights.sum()


def grid_rate(grid, gamma):
    """
    Reference rate (k_BT / gamma) <|grad q|^2> with the Boltzmann average taken over all grid
    nodes.
    """
    if not gamma > 0:
        raise ConfigError(f'must be positive, got {gamma}', field='gamma')
    if grid.energies is None:
        raise ConfigError('grid energies are unknown; load the grid with its field', field='field')
    grad_x, grad_y = np.gradient(grid.q, *grid.spec.spacing, edge_order=2)
    weights = boltzmann_weights(grid.energies, grid.kbt)
    return float(grid.kbt / gamma * np.sum(weights * (grad_x**2 + grad_y**2)))


@dataclass
class WeightedSamples:
    """Points with non-negative weights summing to one."""
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(as_array(self.points))
        self.weights = as_array(self.weights).reshape(-1)
        if len(self.points) == 0 or len(self.points) != len(self.weights):
            raise ConfigError('expected one weight per point', field='weights')
        if (self.weights < 0).any() or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ConfigError('weights must be non-negative and sum to 1', field='weights')

    @classmethod
    def uniform(cls, points):
        points = np.atleast_2d(as_array(points))
        return cls(points, np.full(len(points), 1.0 / len(points)))

    def effective_size(self):
        """Kish effective sample size."""
        return float(1.0 / np.sum(self.weights**2))

    def __len__(self):
        return len(self.points)


def reweight(samples, field, kbt, bins=100):
    """
    Importance weights taking samples to the Boltzmann distribution:
    w_i proportional to exp(-U(x_i) / k_BT) / p_OM(x_i), with p_OM a histogram density of the
    samples with one pseudo-count added to every bin.

    Parameters
    ----------
    samples : array-like, shape (n, k)
    field : omtps.fields.DriftField
        Field providing the potential U
    kbt : float
    bins : int or sequence of int, optional
        Histogram bins per dimension

    Returns
    -------
    weighted : WeightedSamples

    Raises
    ------
    NumericalError
        If the weights cannot be normalized
    """
    points = np.atleast_2d(as_array(samples))
    if len(points) == 0:
        raise ConfigError('no samples to reweight', field='samples')
    if not kbt > 0:
        raise ConfigError(f'must be positive, got {kbt}', field='kbt')
    low, high = points.min(0), points.max(0)
    degenerate = high <= low
    low, high = np.where(degenerate, low - 0.5, low), np.where(degenerate, high + 0.5, high)
    counts, edges = np.histogramdd(points, bins=bins, range=list(zip(low, high)))
    counts = counts + 1.0
    volume = np.prod([np.diff(e)[0] for e in edges])
    density = counts / (counts.sum() * volume)
    index = tuple(
        np.clip(np.searchsorted(e, points[:, d], side='right') - 1, 0, len(e) - 2)
        for d, e in enumerate(edges))
    log_weights = -potential(field, points) / kbt - np.log(density[index])
    bad = ~np.isfinite(log_weights)
    if bad.any():
        raise NumericalError('non-finite reweighting factors',
                             details={'indices': np.flatnonzero(bad).tolist()})
    weights = np.exp(log_weights - log_weights.max())
    total = weights.sum()
    if not total > 0:
        raise NumericalError('reweighting factors sum to zero')
    return WeightedSamples(points, weights / total)


def seed_sampling_from_path(path, field, sim_cfg, progress=False):
    """
    Pool states of unbiased Langevin runs started from points drawn uniformly along a path.

    Each of `sim_cfg.n_replicas` (default 100) replicas starts at a uniformly random position along
    the piecewise-linear path, drawn with `sim_cfg.seed`.

    Returns
    -------
    samples : np.ndarray
        Pooled states of all replicas; the path points themselves when `sim_cfg.n_steps` is 0
    """
    points = path.points
    if sim_cfg.n_steps == 0:
        return points.copy()
    n_replicas = sim_cfg.n_replicas or 100
    rng = np.random.default_rng(sim_cfg.seed)
    position = rng.uniform(0, len(points) - 1, n_replicas)
    segment = np.minimum(position.astype(np.int64), len(points) - 2)
    fraction = (position - segment)[:, None]
    inits = (1 - fraction) * points[segment] + fraction * points[segment + 1]
    trajs = simulate(field, inits, sim_cfg, progress=progress)
    return pool_states(trajs)


@dataclass
class CommittorConfig(DictConfig):  # pylint: disable=too-many-instance-attributes
    """
    Training settings of a neural committor: 2,000 Adam steps with cosine-decayed learning rate
    1e-4, batch 4096, boundary penalties 20, 5 sigmoid layers of width 64. `gradient_domain`
    selects the samples the Dirichlet energy is averaged over: 'all' or only the 'exterior' of
    A and B.
    """
    n_steps: int = 2000
    batch_size: int = 4096
    learning_rate: float = 1e-4
    lambda_a: float = 20.0
    lambda_b: float = 20.0
    hidden_dim: int = 64
    n_layers: int = 5
    activation: str = 'sigmoid'
    gradient_domain: str = ALL_SAMPLES
    seed: int = 0

    def __post_init__(self):
        for name in ('n_steps', 'batch_size', 'hidden_dim', 'n_layers'):
            if getattr(self, name) < 1:
                raise ConfigError(f'must be positive, got {getattr(self, name)}', field=name)
        if not self.learning_rate > 0:
            raise ConfigError(f'must be positive, got {self.learning_rate}', field='learning_rate')
        if self.lambda_a < 0 or self.lambda_b < 0:
            raise ConfigError('penalty weights must be non-negative', field='lambda_a')
        if self.gradient_domain not in GRADIENT_DOMAINS:
            raise ConfigError(f'unknown domain {self.gradient_domain!r}, expected one of '
                              f'{GRADIENT_DOMAINS}', field='gradient_domain')


class NeuralCommittor(nn.Module):
    """MLP with a sigmoid output, so q(x) lies in (0, 1)."""
    def __init__(self, dim=2, hidden_dim=64, n_layers=5, activation='sigmoid', input_shift=None,
                 input_scale=None, lambda_a=20.0, lambda_b=20.0):
        super().__init__()
        self.dim = dim
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.activation = activation
        self.lambda_a = lambda_a
        self.lambda_b = lambda_b
        self.mlp = build_mlp(dim, hidden_dim, 1, n_layers, activation)
        shift = torch.zeros(dim, dtype=DTYPE) if input_shift is None else as_tensor(input_shift)
        scale = torch.ones(dim, dtype=DTYPE) if input_scale is None else as_tensor(input_scale)
        self.register_buffer('input_shift', shift, persistent=False)
        self.register_buffer('input_scale', scale, persistent=False)

    def forward(self, x):
        return torch.sigmoid(self.mlp((x - self.input_shift) / self.input_scale)).squeeze(-1)

    def values(self, points):
        """Committor at points, as numpy."""
        with torch.no_grad():
            return as_array(self(as_tensor(points)))

    def gradient(self, points):
        """Exact input gradient of the committor at points, as numpy."""
        x = as_tensor(points).clone().requires_grad_(True)
        (grad, ) = torch.autograd.grad(self(x).sum(), x)
        return as_array(grad)

    def config(self):
        return {
            'dim': self.dim,
            'hidden_dim': self.hidden_dim,
            'n_layers': self.n_layers,
            'activation': self.activation,
            'input_shift': as_array(self.input_shift).tolist(),
            'input_scale': as_array(self.input_scale).tolist(),
            'lambda_a': self.lambda_a,
            'lambda_b': self.lambda_b,
        }


def _weighted_mean(values, weights):
    total = weights.sum()
    return (values * weights).sum() / total if total > 0 else None


def committor_loss(model, points, weights, in_a, in_b, gradient_domain=ALL_SAMPLES):
    """
    1/2 <|grad q|^2> plus lambda_A 1/2 <q^2> on A and lambda_B 1/2 <(1 - q)^2> on B, each a
    weighted mean over its subset. The gradient term averages over every point, or over the points
    outside A and B when `gradient_domain` is 'exterior'. Empty subsets drop out.
    """
    x = points.clone().requires_grad_(True)
    q = model(x)
    (grad, ) = torch.autograd.grad(q.sum(), x, create_graph=True)
    if gradient_domain == EXTERIOR:
        domain = ~(in_a | in_b)
    else:
        domain = torch.ones_like(in_a)
    loss = torch.zeros((), dtype=DTYPE)
    terms = (
        (0.5 * (grad**2).sum(-1), domain, 1.0),
        (0.5 * q**2, in_a, model.lambda_a),
        (0.5 * (1 - q)**2, in_b, model.lambda_b),
    )
    for values, subset, scale in terms:
        mean = _weighted_mean(values[subset], weights[subset])
        if mean is not None:
            loss = loss + scale * mean
    return loss


def train_committor(samples, regions, cfg, progress=False):
    """
    Fit a neural committor to weighted samples by minimizing `committor_loss` with Adam and a
    cosine-decayed learning rate.

    Parameters
    ----------
    samples : WeightedSamples
    regions : RegionSpec
    cfg : CommittorConfig
    progress : bool, optional

    Returns
    -------
    model : NeuralCommittor

    Raises
    ------
    NumericalError
        If the loss becomes non-finite
    """
    points = as_tensor(samples.points)
    weights = as_tensor(samples.weights)
    in_a, in_b = (torch.as_tensor(mask) for mask in regions.masks(samples.points))
    for name, mask in (('A', in_a), ('B', in_b), ('exterior', ~(in_a | in_b))):
        if not mask.any():
            logger.warning(f'no training samples in {name}; its loss term is dropped')
    shift = points.mean(0)
    scale = points.std(0).clamp_min(1e-8) if len(points) > 1 else torch.ones(points.shape[1],
                                                                              dtype=DTYPE)
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        model = NeuralCommittor(points.shape[1], cfg.hidden_dim, cfg.n_layers, cfg.activation,
                                shift, scale, cfg.lambda_a, cfg.lambda_b)
    generator = torch.Generator().manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.n_steps)
    full_batch = cfg.batch_size >= len(points)
    for step in tqdm(range(cfg.n_steps), disable=not progress, desc='committor'):
        if full_batch:
            batch = slice(None)
        else:
            batch = torch.randint(0, len(points), (cfg.batch_size, ), generator=generator)
        loss = committor_loss(model, points[batch], weights[batch], in_a[batch], in_b[batch],
                              cfg.gradient_domain)
        if not torch.isfinite(loss):
            logger.error(f'committor loss became {loss.item()} at step {step}')
            raise NumericalError(f'non-finite committor loss at step {step}',
                                 details={'step': step})
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()
        if (step + 1) % max(1, cfg.n_steps // 10) == 0:
            logger.info(f'committor step {step + 1}/{cfg.n_steps}: loss {loss.item():.6g}')
    model.eval()
    return model


def estimate_rate(committor, samples, kbt, gamma):
    """
    Rate (k_BT / gamma) sum_i w_i |grad q(x_i)|^2.

    Parameters
    ----------
    committor : CommittorGrid or NeuralCommittor
        Grid gradients come from central differences; neural gradients are exact
    samples : WeightedSamples
    kbt, gamma : float

    Raises
    ------
    ConfigError
        If a sample lies outside a grid committor's box
    """
    if not gamma > 0:
        raise ConfigError(f'must be positive, got {gamma}', field='gamma')
    gradient = committor.gradient(samples.points)
    return float(kbt / gamma * np.sum(samples.weights * (gradient**2).sum(-1)))


def save_committor_grid(file_path, grid, metadata=None):
    """Write grid values as a CSV matrix (row i = xs[i]) with a JSON sidecar."""
    sidecar = dict(metadata or {}, **grid.metadata())
    return write_array_csv(file_path, grid.q, [f'q{j}' for j in range(grid.spec.ny)],
                           metadata=sidecar)


def load_committor_grid(file_path, field=None):
    """Read a grid written by `save_committor_grid`, recomputing energies if a field is given."""
    q, metadata = read_array_csv(file_path)
    spec = GridSpec(metadata['lower'], metadata['upper'], metadata['nx'], metadata['ny'])
    energies = potential(field, spec.nodes()) if field is not None else None
    return CommittorGrid(spec, q, RegionSpec.from_dict(metadata['regions']), metadata['kbt'],
                         energies)


def save_neural_committor(file_path, model):
    write_parameter_blob(file_path, {'format_version': 1, 'committor': model.config()},
                         model.state_dict())


def load_neural_committor(file_path):
    header, state = read_parameter_blob(file_path)
    model = NeuralCommittor(**header['committor'])
    model.load_state_dict(state)
    model.eval()
    return model
