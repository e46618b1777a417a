"""
Analytic drift fields: potentials, their drifts and divergences, and closed-form mixture scores.

Concepts
--------
- potential: scalar function phi(x) over R^k, an energy for physical systems
- drift: Phi(x) = -grad phi(x), the force for physical systems
- divergence: div Phi(x) = -laplacian phi(x)
- field: any object implementing the DriftField contract below. Learned scores plug into the same
    contract through `omtps.models.ScoreField`, without an analytic divergence.

All field methods take float64 tensors of shape (..., k) and are differentiable with torch autograd,
so path actions built on them can be differentiated with respect to the path. The module level
functions accept array-likes and return numpy values.
"""
from dataclasses import dataclass
import logging

import numpy as np
from scipy import optimize
import torch

from .exceptions import ConfigError, UnsupportedOperationError
from .utils import DTYPE, as_array, as_tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UnitSystem:
    """Labels for the units a field's coordinates, energies and times are expressed in."""
    length: str = 'dimensionless'
    energy: str = 'dimensionless'
    time: str = 'dimensionless'

    def to_dict(self):
        return {'length': self.length, 'energy': self.energy, 'time': self.time}


class DriftField:
    """
    A drift provider over R^k. Should not be used directly, instead use one of the deriving classes.

    Deriving classes implement `potential` and `drift`, and `divergence` when an analytic second
    derivative exists (`has_analytic_divergence`).
    """
    kind = None
    has_potential = True
    has_analytic_divergence = True

    def __init__(self, dim, units=None):
        if dim < 1:
            raise ConfigError(f'dimension must be positive, got {dim}', field='dim')
        self.dim = int(dim)
        self.units = units or UnitSystem()

    def potential(self, x):
        raise UnsupportedOperationError(f'{type(self).__name__} has no scalar potential')

    def drift(self, x):
        raise NotImplementedError

    def divergence(self, x):
        raise UnsupportedOperationError(
            f'{type(self).__name__} has no analytic divergence; use a Hutchinson divergence mode')

    def jacobian(self, x):
        """
        Jacobian of the drift at a single point by reverse-mode differentiation.

        Parameters
        ----------
        x : torch.Tensor
            Point of shape (k,)

        Returns
        -------
        jacobian : torch.Tensor
            Matrix J[i, j] = d Phi_i / d x_j of shape (k, k)
        """
        x = self.check_point(x)
        return torch.autograd.functional.jacobian(self.drift, x)

    def check_point(self, x):
        """Convert to a float64 tensor and verify the trailing dimension matches the field."""
        x = as_tensor(x)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise ConfigError(f'expected points of dimension {self.dim}, got shape '
                              f'{tuple(x.shape)}', field='point')
        return x

    def to_config(self):
        raise NotImplementedError

    def __repr__(self):
        return f'{type(self).__name__}(dim={self.dim})'


class MuellerBrownPotential(DriftField):
    """
    Four-term Gaussian Mueller-Brown surface in two dimensions.

    Each term is A_i exp(a_i dx^2 + b_i dx dy + c_i dy^2) with dx = x - x0_i, dy = y - y0_i. The
    default coefficients are the rescaled surface with minima near (48, 8), (32, 16) and (24, 32).
    The fourth (positive) term has a positive-definite exponent, so the surface is not bounded
    above; nothing in this package relies on global boundedness.
    """
    kind = 'mueller_brown'

    DEFAULT_AMPLITUDES = (-17.3, -8.7, -14.7, 1.3)
    DEFAULT_A = (-0.0039, -0.0039, -0.0254, 0.00273)
    DEFAULT_B = (0.0, 0.0, 0.043, 0.0023)
    DEFAULT_C = (-0.0391, -0.0391, -0.0254, 0.00273)
    DEFAULT_CENTERS = ((48.0, 8.0), (32.0, 16.0), (24.0, 32.0), (16.0, 24.0))

    def __init__(self, amplitudes=DEFAULT_AMPLITUDES, a=DEFAULT_A, b=DEFAULT_B, c=DEFAULT_C,
                 centers=DEFAULT_CENTERS, units=None):
        super().__init__(2, units)
        self.amplitudes = as_tensor(amplitudes)
        self.a = as_tensor(a)
        self.b = as_tensor(b)
        self.c = as_tensor(c)
        self.centers = as_tensor(centers)
        shapes = {tuple(t.shape) for t in (self.amplitudes, self.a, self.b, self.c)}
        if shapes != {(4,)} or tuple(self.centers.shape) != (4, 2):
            raise ConfigError('the Mueller-Brown surface has exactly four terms', field='terms')
        self._minima = None
        self._saddles = None

    def _terms(self, x):
        x = self.check_point(x)
        dx = x[..., 0:1] - self.centers[:, 0]
        dy = x[..., 1:2] - self.centers[:, 1]
        exponent = self.a * dx**2 + self.b * dx * dy + self.c * dy**2
        weight = self.amplitudes * torch.exp(exponent)
        grad_x = 2 * self.a * dx + self.b * dy
        grad_y = self.b * dx + 2 * self.c * dy
        return weight, grad_x, grad_y

    def potential(self, x):
        weight, _, _ = self._terms(x)
        return weight.sum(-1)

    def drift(self, x):
        weight, grad_x, grad_y = self._terms(x)
        return -torch.stack([(weight * grad_x).sum(-1), (weight * grad_y).sum(-1)], dim=-1)

    def divergence(self, x):
        weight, grad_x, grad_y = self._terms(x)
        laplacian = weight * (grad_x**2 + grad_y**2 + 2 * self.a + 2 * self.c)
        return -laplacian.sum(-1)

    def minima(self):
        """Local minima, found by descent from the centres of the three attractive terms."""
        if self._minima is None:
            starts = as_array(self.centers[as_array(self.amplitudes) < 0])
            self._minima = locate_minima(self, starts)
        return self._minima

    def saddles(self):
        """Index-1 saddle points inside the box spanned by the minima, padded by 25%."""
        if self._saddles is None:
            lower, upper = padded_bounds(self.minima(), pad=0.25)
            self._saddles = locate_saddles(self, lower, upper)
        return self._saddles

    def to_config(self):
        return {
            'kind': self.kind,
            'amplitudes': as_array(self.amplitudes).tolist(),
            'a': as_array(self.a).tolist(),
            'b': as_array(self.b).tolist(),
            'c': as_array(self.c).tolist(),
            'centers': as_array(self.centers).tolist(),
        }


class QuadraticWell(DriftField):
    """Isotropic harmonic well phi(x) = stiffness / 2 * |x - center|^2."""
    kind = 'quadratic'

    def __init__(self, dim=2, stiffness=1.0, center=None, units=None):
        super().__init__(dim, units)
        if stiffness <= 0:
            raise ConfigError('must be positive', field='stiffness')
        self.stiffness = float(stiffness)
        self.center = as_tensor(np.zeros(self.dim) if center is None else center)
        if tuple(self.center.shape) != (self.dim,):
            raise ConfigError(f'expected {self.dim} coordinates', field='center')

    def potential(self, x):
        x = self.check_point(x)
        return 0.5 * self.stiffness * ((x - self.center)**2).sum(-1)

    def drift(self, x):
        x = self.check_point(x)
        return -self.stiffness * (x - self.center)

    def divergence(self, x):
        x = self.check_point(x)
        return torch.full(x.shape[:-1], -self.stiffness * self.dim, dtype=DTYPE)

    def to_config(self):
        return {'kind': self.kind, 'dim': self.dim, 'stiffness': self.stiffness,
                'center': as_array(self.center).tolist()}


class LinearField(DriftField):
    """
    Linear drift Phi(x) = M x. Its divergence is trace(M) everywhere; it has a potential
    -x^T M x / 2 only when M is symmetric.
    """
    kind = 'linear'

    def __init__(self, matrix, units=None):
        matrix = as_tensor(matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ConfigError('expected a square matrix', field='matrix')
        super().__init__(matrix.shape[0], units)
        self.matrix = matrix
        self.has_potential = bool(torch.allclose(matrix, matrix.T))

    def potential(self, x):
        if not self.has_potential:
            raise UnsupportedOperationError('a non-symmetric linear drift has no potential')
        x = self.check_point(x)
        return -0.5 * (x * (x @ self.matrix.T)).sum(-1)

    def drift(self, x):
        x = self.check_point(x)
        return x @ self.matrix.T

    def divergence(self, x):
        x = self.check_point(x)
        return torch.full(x.shape[:-1], float(torch.trace(self.matrix)), dtype=DTYPE)

    def to_config(self):
        return {'kind': self.kind, 'matrix': as_array(self.matrix).tolist()}


class DoubleWell(DriftField):
    """
    Symmetric double well along the first coordinate, harmonic in the others:
    phi(x) = height * (x_1^2 - 1)^2 + stiffness / 2 * sum_{j>1} x_j^2.
    Minima sit at x_1 = -1 and +1, the saddle at the origin.
    """
    kind = 'double_well'

    def __init__(self, dim=1, height=1.0, stiffness=1.0, units=None):
        super().__init__(dim, units)
        if height <= 0 or stiffness <= 0:
            raise ConfigError('height and stiffness must be positive', field='height')
        self.height = float(height)
        self.stiffness = float(stiffness)

    def potential(self, x):
        x = self.check_point(x)
        return (self.height * (x[..., 0]**2 - 1)**2
                + 0.5 * self.stiffness * (x[..., 1:]**2).sum(-1))

    def drift(self, x):
        x = self.check_point(x)
        first = -4 * self.height * x[..., :1] * (x[..., :1]**2 - 1)
        return torch.cat([first, -self.stiffness * x[..., 1:]], dim=-1)

    def divergence(self, x):
        x = self.check_point(x)
        return (-(12 * self.height * x[..., 0]**2 - 4 * self.height)
                - self.stiffness * (self.dim - 1))

    def to_config(self):
        return {'kind': self.kind, 'dim': self.dim, 'height': self.height,
                'stiffness': self.stiffness}


class GaussianMixtureField(DriftField):
    """
    Mixture of isotropic Gaussians with a shared variance. The drift is the exact score
    grad log p(x) and the potential is -log p(x), so Boltzmann sampling at k_BT = 1 reproduces the
    mixture.

    Parameters
    ----------
    weights : array-like of float
        Component weights, must sum to 1
    means : array-like, shape (n_components, k)
        Component means
    variance : float
        Shared isotropic variance sigma^2
    """
    kind = 'gaussian_mixture'

    def __init__(self, weights, means, variance, units=None):
        means = as_tensor(means)
        if means.ndim != 2:
            raise ConfigError('expected a (n_components, k) array', field='means')
        super().__init__(means.shape[1], units)
        weights = as_tensor(weights)
        if tuple(weights.shape) != (means.shape[0],) or bool((weights < 0).any()):
            raise ConfigError('expected one non-negative weight per component', field='weights')
        if abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ConfigError(f'must sum to 1, got {float(weights.sum())}', field='weights')
        if not variance > 0:
            raise ConfigError(f'must be positive, got {variance}', field='variance')
        self.weights = weights
        self.means = means
        self.variance = float(variance)

    def _component_scores(self, x):
        x = self.check_point(x)
        diff = x.unsqueeze(-2) - self.means
        log_density = (torch.log(self.weights) - 0.5 * (diff**2).sum(-1) / self.variance
                       - 0.5 * self.dim * np.log(2 * np.pi * self.variance))
        responsibilities = torch.softmax(log_density, dim=-1)
        return log_density, responsibilities, -diff / self.variance

    def potential(self, x):
        log_density, _, _ = self._component_scores(x)
        return -torch.logsumexp(log_density, dim=-1)

    def drift(self, x):
        _, responsibilities, scores = self._component_scores(x)
        return (responsibilities.unsqueeze(-1) * scores).sum(-2)

    def divergence(self, x):
        _, responsibilities, scores = self._component_scores(x)
        mean_score = (responsibilities.unsqueeze(-1) * scores).sum(-2)
        spread = (responsibilities * (scores**2).sum(-1)).sum(-1) - (mean_score**2).sum(-1)
        return -self.dim / self.variance + spread

    def affine_marginal(self, scale, noise_variance):
        """
        Distribution of scale * x + sqrt(noise_variance) * z for x drawn from this mixture.

        Raises
        ------
        ConfigError
            If the resulting variance is zero
        """
        variance = scale**2 * self.variance + noise_variance
        if not variance > 0:
            raise ConfigError(f'degenerate marginal variance {variance}', field='variance')
        return GaussianMixtureField(self.weights, scale * self.means, variance, self.units)

    def sample(self, n, rng):
        """Draw n points with a numpy Generator."""
        components = rng.choice(len(self.weights), size=n, p=as_array(self.weights))
        noise = rng.standard_normal((n, self.dim))
        return as_array(self.means)[components] + np.sqrt(self.variance) * noise

    def to_config(self):
        return {'kind': self.kind, 'weights': as_array(self.weights).tolist(),
                'means': as_array(self.means).tolist(), 'variance': self.variance}


FIELD_KINDS = {
    cls.kind: cls
    for cls in (MuellerBrownPotential, QuadraticWell, LinearField, DoubleWell,
                GaussianMixtureField)
}


def field_from_config(config):
    """
    Build a field from its JSON description, e.g. {"kind": "mueller_brown"} or
    {"kind": "gaussian_mixture", "weights": [...], "means": [[...]], "variance": 1.0}.

    Raises
    ------
    ConfigError
        For an unknown kind or parameters the field's constructor does not accept
    """
    if not isinstance(config, dict) or 'kind' not in config:
        raise ConfigError('required field is missing', field='field.kind')
    params = dict(config)
    kind = params.pop('kind')
    if kind not in FIELD_KINDS:
        raise ConfigError(f'unknown field kind {kind!r}, expected one of {sorted(FIELD_KINDS)}',
                          field='field.kind')
    units = params.pop('units', None)
    try:
        return FIELD_KINDS[kind](**params, units=UnitSystem(**units) if units else None)
    except TypeError as ex:
        raise ConfigError(str(ex), field='field') from None


def potential(field, point):
    """Scalar potential at one point or a batch of points, as numpy."""
    return as_array(field.potential(field.check_point(point)))


def drift(field, point):
    """Drift -grad phi at one point or a batch of points, as numpy."""
    return as_array(field.drift(field.check_point(point)))


def divergence(field, point):
    """Analytic divergence of the drift, as numpy. Raises UnsupportedOperationError if absent."""
    if not field.has_analytic_divergence:
        raise UnsupportedOperationError(
            f'{type(field).__name__} has no analytic divergence; use a Hutchinson divergence mode')
    return as_array(field.divergence(field.check_point(point)))


_DEFAULT_MUELLER_BROWN = None


def mb_potential(point):
    """Energy of the default Mueller-Brown surface at one point or a batch of points."""
    global _DEFAULT_MUELLER_BROWN  # pylint: disable=global-statement
    if _DEFAULT_MUELLER_BROWN is None:
        _DEFAULT_MUELLER_BROWN = MuellerBrownPotential()
    return potential(_DEFAULT_MUELLER_BROWN, point)


def mixture_noised_score(mix, point, tau, schedule):
    """
    Exact score of a Gaussian mixture after the DDPM forward process has run to step `tau`.

    Parameters
    ----------
    mix : GaussianMixtureField
        The clean data distribution
    point : array-like
        Point(s) of dimension k
    tau : int
        Latent step, 0 <= tau <= T_d
    schedule : omtps.models.NoiseScheduleDDPM
        Schedule providing alpha_bar(tau)

    Returns
    -------
    score : np.ndarray
        grad log p_tau(point)
    """
    alpha_bar = schedule.alpha_bar(tau)
    if alpha_bar == 1.0:
        return drift(mix, point)
    noised = mix.affine_marginal(np.sqrt(alpha_bar), 1.0 - alpha_bar)
    return drift(noised, point)


def _potential_and_gradient(field):
    def fun(x):
        x = as_tensor(x)
        return float(field.potential(x)), -as_array(field.drift(x))
    return fun


def locate_minima(field, starts, gtol=1e-10, merge_distance=1e-3):
    """
    Local minima of a field's potential reached by quasi-Newton descent from each start.

    Parameters
    ----------
    field : DriftField
        Field with a potential
    starts : array-like, shape (n, k)
        Starting points
    gtol : float, optional
        Gradient norm tolerance passed to the optimizer
    merge_distance : float, optional
        Minima closer than this are reported once

    Returns
    -------
    minima : np.ndarray, shape (m, k)
        Distinct minima sorted by increasing energy
    """
    found = []
    for start in np.atleast_2d(starts):
        result = optimize.minimize(_potential_and_gradient(field), start, jac=True, method='BFGS',
                                   options={'gtol': gtol, 'maxiter': 10000})
        if not any(np.linalg.norm(result.x - m) < merge_distance for m in found):
            found.append(result.x)
    found = np.array(found)
    energies = potential(field, found)
    logger.debug(f'located {len(found)} minima of {field!r}')
    return found[np.argsort(energies)]


def padded_bounds(points, pad=0.1):
    """Axis-aligned bounding box of a point set, widened by `pad` times its extent on each side."""
    points = np.atleast_2d(points)
    lower, upper = points.min(axis=0), points.max(axis=0)
    margin = pad * np.maximum(upper - lower, 1e-12)
    return lower - margin, upper + margin


def locate_saddles(field, lower, upper, n_grid=200, merge_distance=1e-3):
    """
    Index-1 saddle points of a 2D field inside a box, by dense grid search plus refinement.

    Candidates are grid-local minima of |grad phi|^2; each is refined with a root finder on the
    gradient and kept if the Hessian has exactly one negative eigenvalue.

    Returns
    -------
    saddles : np.ndarray, shape (m, 2)
        Distinct saddles sorted by increasing energy
    """
    if field.dim != 2:
        raise ConfigError('saddle search is implemented for two dimensional fields', field='dim')
    xs = np.linspace(lower[0], upper[0], n_grid)
    ys = np.linspace(lower[1], upper[1], n_grid)
    grid = np.stack(np.meshgrid(xs, ys, indexing='ij'), axis=-1)
    force_sq = (drift(field, grid)**2).sum(-1)
    interior = force_sq[1:-1, 1:-1]
    is_local_min = np.ones_like(interior, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                shifted = force_sq[1 + di:n_grid - 1 + di, 1 + dj:n_grid - 1 + dj]
                is_local_min &= interior <= shifted
    candidates = grid[1:-1, 1:-1][is_local_min]

    def gradient(x):
        return -drift(field, x)

    def hessian(x):
        return -as_array(field.jacobian(as_tensor(x)))

    found = []
    for candidate in candidates:
        result = optimize.root(gradient, candidate, jac=hessian, method='hybr', tol=1e-14)
        if not result.success or np.linalg.norm(gradient(result.x)) > 1e-8:
            continue
        if np.sum(np.linalg.eigvalsh(hessian(result.x)) < 0) != 1:
            continue
        if not np.all((result.x >= lower) & (result.x <= upper)):
            continue
        if not any(np.linalg.norm(result.x - s) < merge_distance for s in found):
            found.append(result.x)
    found = np.array(found).reshape(-1, 2)
    if len(found):
        found = found[np.argsort(potential(field, found))]
    logger.debug(f'located {len(found)} saddles of {field!r}')
    return found
