"""
Markov state models on clustered trajectories and the path-quality metrics computed with them.

A reference MSM is fit on k-means states of unbiased trajectories. Generated continuous paths are
subsampled and discretized on the same clustering, then scored by

- Jensen-Shannon divergence between the state-visit distributions of generated and reference
    paths
- fraction of paths whose every transition has nonzero probability under the MSM
- average negative log likelihood of a transition, conditioned on the path's end state

States are 0-based throughout.
"""
from dataclasses import dataclass, field as dataclass_field
import logging

import numpy as np
from scipy import special
from scipy.spatial import cKDTree

from .exceptions import ConfigError, InvalidPathError, UnreachableError
from .langevin import pool_states
from .utils import as_array, config_digest, read_json, write_json

logger = logging.getLogger(__name__)

DEFAULT_N_STATES = 20
DEFAULT_PATH_LENGTH = 20
METRIC_KEYS = ('jsd', 'fraction_valid', 'mean_nll', 'n_paths')


@dataclass
class Clustering:
    """Cluster centers; points are assigned to their nearest center."""
    centers: np.ndarray
    inertia_history: list = dataclass_field(default_factory=list)
    seed: int = None

    def __post_init__(self):
        self.centers = np.atleast_2d(as_array(self.centers))
        if len(self.centers) < 2:
            raise ConfigError(f'need at least 2 centers, got {len(self.centers)}', field='k')
        if len(np.unique(self.centers, axis=0)) != len(self.centers):
            raise ConfigError('cluster centers must be distinct', field='centers')
        self._tree = cKDTree(self.centers)

    @property
    def n_states(self):
        return len(self.centers)

    def assign(self, points):
        """Index of the nearest center for each point."""
        points = np.atleast_2d(as_array(points))
        if points.shape[1] != self.centers.shape[1]:
            raise ConfigError(f'expected points of dimension {self.centers.shape[1]}, got '
                              f'{points.shape[1]}', field='points')
        _, states = self._tree.query(points)
        return states.astype(np.int64)

    def digest(self):
        return config_digest({'centers': self.centers.tolist()})

    def to_dict(self):
        return {'centers': self.centers.tolist(), 'inertia_history': list(self.inertia_history),
                'seed': self.seed}

    @classmethod
    def from_dict(cls, values):
        return cls(values['centers'], values.get('inertia_history', []), values.get('seed'))


def _farthest_point_init(points, k, rng):
    chosen = [int(rng.integers(len(points)))]
    distance = np.linalg.norm(points - points[chosen[0]], axis=1)
    for _ in range(k - 1):
        chosen.append(int(np.argmax(distance)))
        distance = np.minimum(distance, np.linalg.norm(points - points[chosen[-1]], axis=1))
    return points[chosen].copy()


def fit_clusters(points, k=DEFAULT_N_STATES, seed=0, max_iter=300):
    """
    k-means clustering with greedy farthest-point initialization.

    The first center is a point drawn with `seed`; each further center is the point farthest from
    those already chosen. Lloyd iterations then alternate assignment and center update until the
    assignment stops changing. A cluster that loses all its points keeps its previous center.

    Parameters
    ----------
    points : array-like, shape (n, d)
    k : int, optional
        Number of clusters, >= 2
    seed : int, optional
    max_iter : int, optional

    Returns
    -------
    clustering : Clustering
        Centers plus the inertia (sum of squared distances) after each assignment step, which
        never increases

    Raises
    ------
    ConfigError
        If there are fewer than k distinct points
    """
    points = np.atleast_2d(as_array(points))
    if k < 2:
        raise ConfigError(f'must be at least 2, got {k}', field='k')
    n_distinct = len(np.unique(points, axis=0))
    if n_distinct < k:
        raise ConfigError(f'{n_distinct} distinct points cannot form {k} clusters', field='k')
    rng = np.random.default_rng(seed)
    centers = _farthest_point_init(points, k, rng)
    labels = None
    history = []
    for iteration in range(max_iter):
        distance, new_labels = cKDTree(centers).query(points)
        history.append(float(np.sum(distance**2)))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        for state in range(k):
            members = points[labels == state]
            if len(members):
                centers[state] = members.mean(axis=0)
    else:
        logger.warning(f'k-means stopped after {max_iter} iterations without converging')
    logger.info(f'k-means with k={k} finished after {iteration + 1} iterations, '
                f'inertia {history[-1]:.6g}')
    return Clustering(centers, history, seed)


@dataclass
class MSM:
    """Row-stochastic transition matrix estimated at a lag (in saved steps)."""
    transition_matrix: np.ndarray
    lag: int = 1
    clustering_digest: str = None
    counts: np.ndarray = dataclass_field(default=None, repr=False)

    def __post_init__(self):
        matrix = np.asarray(self.transition_matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ConfigError(f'transition matrix must be square, got shape {matrix.shape}',
                              field='transition_matrix')
        if (matrix < 0).any():
            raise ConfigError('transition probabilities must be non-negative',
                              field='transition_matrix')
        if np.abs(matrix.sum(axis=1) - 1.0).max() > 1e-12:
            raise ConfigError('transition matrix rows must sum to 1', field='transition_matrix')
        if self.lag < 1:
            raise ConfigError(f'must be positive, got {self.lag}', field='lag')
        self.transition_matrix = matrix
        self._powers = {0: np.eye(len(matrix)), 1: matrix}

    @property
    def n_states(self):
        return len(self.transition_matrix)

    def power(self, n):
        """T^n, cached."""
        if n not in self._powers:
            self._powers[n] = np.linalg.matrix_power(self.transition_matrix, n)
        return self._powers[n]

    def check_state(self, state, name='state'):
        if not 0 <= state < self.n_states:
            raise ConfigError(f'must lie in [0, {self.n_states}), got {state}', field=name)
        return int(state)

    def bridge_probabilities(self, current, end, remaining):
        """
        Distribution of the next state given the current state, the end state and the number of
        transitions left (including this one):

            P(j) = T[current, j] (T^(remaining - 1))[j, end] / (T^remaining)[current, end]
        """
        numerator = self.transition_matrix[current] * self.power(remaining - 1)[:, end]
        denominator = self.power(remaining)[current, end]
        if not denominator > 0:
            return None
        return numerator / denominator

    def to_dict(self):
        return {
            'transition_matrix': self.transition_matrix.tolist(),
            'lag': self.lag,
            'clustering_digest': self.clustering_digest,
            'counts': None if self.counts is None else np.asarray(self.counts).tolist(),
        }

    @classmethod
    def from_dict(cls, values):
        counts = values.get('counts')
        return cls(values['transition_matrix'], values.get('lag', 1),
                   values.get('clustering_digest'), None if counts is None else np.array(counts))


def count_transitions(dtrajs, n_states, lag=1):
    """Matrix C[i, j] of observed i -> j transitions at `lag`, summed over discrete trajectories."""
    counts = np.zeros((n_states, n_states))
    for dtraj in dtrajs:
        dtraj = np.asarray(dtraj, dtype=np.int64)
        if len(dtraj) <= lag:
            logger.debug(f'skipping a trajectory of {len(dtraj)} states, not longer than lag {lag}')
            continue
        np.add.at(counts, (dtraj[:-lag], dtraj[lag:]), 1.0)
    return counts


def msm_from_counts(counts, lag=1, clustering_digest=None):
    """Row-normalized transition matrix; rows without counts become self-loops."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.sum() == 0:
        raise ConfigError('no transitions observed at this lag', field='trajs')
    totals = counts.sum(axis=1, keepdims=True)
    empty = totals[:, 0] == 0
    if empty.any():
        logger.warning(f'states {np.flatnonzero(empty).tolist()} have no outgoing transitions; '
                       'they become absorbing')
    matrix = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    matrix[empty, empty] = 1.0
    return MSM(matrix, lag, clustering_digest, counts)


def fit_msm(trajs, clustering, lag=1):
    """
    Maximum-likelihood (row-normalized count) MSM of trajectories discretized on a clustering.

    Parameters
    ----------
    trajs : list of omtps.langevin.Trajectory or list of np.ndarray
        Continuous trajectories, each of shape (n_i, d)
    clustering : Clustering
    lag : int, optional
        Lag in saved steps

    Returns
    -------
    msm : MSM

    Raises
    ------
    ConfigError
        If no trajectory is longer than `lag`
    """
    if lag < 1:
        raise ConfigError(f'must be positive, got {lag}', field='lag')
    dtrajs = [clustering.assign(pool_states([traj]) if hasattr(traj, 'states') else traj)
              for traj in trajs]
    counts = count_transitions(dtrajs, clustering.n_states, lag)
    msm = msm_from_counts(counts, lag, clustering.digest())
    logger.info(f'fit MSM on {len(dtrajs)} trajectories, {int(counts.sum())} transitions at lag '
                f'{lag}')
    return msm


def sample_bridge(msm, s_start, s_end, length, n_paths, rng=None):
    """
    Draw discrete paths from the chain conditioned to start at `s_start` and end at `s_end`.

    Parameters
    ----------
    msm : MSM
    s_start, s_end : int
    length : int
        Number of states per path, >= 2
    n_paths : int
    rng : np.random.Generator or int, optional

    Returns
    -------
    paths : np.ndarray of int, shape (n_paths, length)

    Raises
    ------
    UnreachableError
        If `s_end` cannot be reached from `s_start` in exactly `length - 1` transitions
    """
    s_start = msm.check_state(s_start, 's_start')
    s_end = msm.check_state(s_end, 's_end')
    if length < 2:
        raise ConfigError(f'must be at least 2, got {length}', field='length')
    if msm.power(length - 1)[s_start, s_end] <= 0:
        raise UnreachableError(f'state {s_end} is unreachable from {s_start} in {length - 1} '
                               'transitions')
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    paths = np.empty((n_paths, length), dtype=np.int64)
    paths[:, 0] = s_start
    for t in range(length - 1):
        remaining = length - 1 - t
        for state in np.unique(paths[:, t]):
            rows = np.flatnonzero(paths[:, t] == state)
            probabilities = msm.bridge_probabilities(state, s_end, remaining)
            probabilities = probabilities / probabilities.sum()
            paths[rows, t + 1] = rng.choice(msm.n_states, size=len(rows), p=probabilities)
    return paths


def transition_probabilities(msm, path):
    """T[s_t, s_(t+1)] for each transition of a discrete path."""
    path = np.asarray(path, dtype=np.int64)
    return msm.transition_matrix[path[:-1], path[1:]]


def path_nll(msm, path, s_end=None):
    """
    Average negative log likelihood of a transition, conditioned on the end state:

        -1/(L-1) sum_t log( T[s_t, s_(t+1)] (T^(L-t-2))[s_(t+1), s_end] / (T^(L-t-1))[s_t, s_end] )

    with t = 0 .. L-2. `s_end` defaults to the path's last state.

    Raises
    ------
    InvalidPathError
        If the path has a zero-probability transition or does not end in `s_end`
    """
    path = np.asarray(path, dtype=np.int64)
    if len(path) < 2:
        raise ConfigError('a path needs at least two states', field='path')
    s_end = int(path[-1]) if s_end is None else msm.check_state(s_end, 's_end')
    length = len(path)
    total = 0.0
    for t in range(length - 1):
        probabilities = msm.bridge_probabilities(path[t], s_end, length - 1 - t)
        probability = 0.0 if probabilities is None else probabilities[path[t + 1]]
        if not probability > 0:
            raise InvalidPathError(f'transition {path[t]} -> {path[t + 1]} at step {t} has zero '
                                   f'probability given end state {s_end}')
        total -= np.log(probability)
    return float(total / (length - 1))


def is_valid(msm, path):
    return bool(np.all(transition_probabilities(msm, path) > 0))


def fraction_valid(msm, paths):
    """Share of discrete paths whose every transition has nonzero probability."""
    if len(paths) == 0:
        raise ConfigError('no paths to score', field='paths')
    return float(np.mean([is_valid(msm, path) for path in paths]))


def jsd(p, q, base=None):
    """
    Jensen-Shannon divergence of two categorical distributions, in nats unless `base` is given
    (base=2 gives bits). Bounded by log(2) nats.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ConfigError(f'distributions must share one support, got shapes {p.shape} and '
                          f'{q.shape}', field='q')
    for name, values in (('p', p), ('q', q)):
        if (values < 0).any() or abs(values.sum() - 1.0) > 1e-8:
            raise ConfigError('must be non-negative and sum to 1', field=name)
    mixture = 0.5 * (p + q)
    value = 0.5 * (special.rel_entr(p, mixture).sum() + special.rel_entr(q, mixture).sum())
    value = float(np.clip(value, 0.0, np.log(2)))
    return value / np.log(base) if base is not None else value


def discretize_paths(paths, clustering, length=DEFAULT_PATH_LENGTH):
    """
    Subsample continuous paths to `length` evenly indexed points, round(linspace(0, n - 1, L)), and
    assign each point to its nearest center.

    Parameters
    ----------
    paths : list of omtps.action.Path or list of array-like
    clustering : Clustering
    length : int, optional

    Returns
    -------
    dpaths : np.ndarray of int, shape (n_paths, length)
    """
    dpaths = []
    for path in paths:
        points = np.atleast_2d(as_array(getattr(path, 'points', path)))
        if len(points) < length:
            raise ConfigError(f'cannot subsample a path of {len(points)} points to {length}',
                              field='length')
        index = np.round(np.linspace(0, len(points) - 1, length)).astype(np.int64)
        dpaths.append(clustering.assign(points[index]))
    return np.array(dpaths, dtype=np.int64).reshape(len(dpaths), length)


def state_distribution(dpaths, n_states):
    """Frequency of each state over all points of all discrete paths."""
    states = np.concatenate([np.asarray(path, dtype=np.int64) for path in dpaths])
    counts = np.bincount(states, minlength=n_states).astype(np.float64)
    return counts / counts.sum()


def evaluate_paths(msm, dpaths, reference):
    """
    Score generated discrete paths against reference discrete paths under a reference MSM.

    Returns
    -------
    report : dict
        jsd (nats) between state distributions, fraction_valid, mean_nll over valid paths (None if
        there are none) and n_paths
    """
    if len(dpaths) == 0:
        raise ConfigError('no paths to score', field='paths')
    valid = [path for path in dpaths if is_valid(msm, path)]
    if valid:
        mean_nll = float(np.mean([path_nll(msm, path) for path in valid]))
    else:
        logger.warning('no generated path has nonzero probability under the MSM')
        mean_nll = None
    report = {
        'jsd': jsd(state_distribution(dpaths, msm.n_states),
                   state_distribution(reference, msm.n_states)),
        'fraction_valid': len(valid) / len(dpaths),
        'mean_nll': mean_nll,
        'n_paths': len(dpaths),
    }
    logger.info(f'path metrics: {report}')
    return report


def save_msm(file_path, msm, clustering):
    write_json(file_path, {'clustering': clustering.to_dict(), 'msm': msm.to_dict()})


def load_msm(file_path):
    """
    Returns
    -------
    msm : MSM
    clustering : Clustering
    """
    values = read_json(file_path)
    clustering = Clustering.from_dict(values['clustering'])
    msm = MSM.from_dict(values['msm'])
    if msm.clustering_digest not in (None, clustering.digest()):
        raise ConfigError('MSM was fit on a different clustering', field='clustering')
    return msm, clustering
