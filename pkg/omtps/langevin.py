"""
Euler-Maruyama integration of overdamped Langevin dynamics.

The update for a state x under a drift field Phi is

    x' = x + (dt / zeta) Phi(x) + sqrt(2 D dt) z,    zeta = friction * mass,  D = k_BT / zeta

with z standard normal. Replicas run vectorised, each drawing its Gaussian variates from its own
numpy PCG64 stream seeded `seed ^ replica_index`, so a run is reproducible replica by replica
regardless of how many replicas share it.
"""
from dataclasses import dataclass, field as dataclass_field
import logging
import pathlib

import numpy as np
import pandas as pd
from tqdm import tqdm

from .exceptions import ConfigError, IntegrationError
from .utils import (CSV_FLOAT_FORMAT, DictConfig, as_array, as_tensor, check_finite, config_digest,
                    read_json, write_json)

logger = logging.getLogger(__name__)

# number of steps of Gaussian variates drawn per replica at a time
NOISE_CHUNK = 1024


@dataclass
class SimConfig(DictConfig):  # pylint: disable=too-many-instance-attributes
    """
    Parameters of an overdamped Langevin run.

    Parameters
    ----------
    dt : float
        Integration timestep
    friction : float
        Friction coefficient gamma
    mass : float, optional
        Particle mass, zeta = friction * mass
    kbt : float, optional
        Thermal energy k_BT, zero for deterministic gradient flow
    n_steps : int, optional
        Number of integration steps per replica
    n_replicas : int, optional
        Number of replicas; initial states are cycled to fill them. Defaults to one per initial
        state.
    seed : int, optional
        Base seed of the replica streams
    stride : int, optional
        Save every `stride`-th state
    max_norm : float, optional
        A state whose norm exceeds this aborts the run
    """
    dt: float
    friction: float
    mass: float = 1.0
    kbt: float = 1.0
    n_steps: int = 1000
    n_replicas: int = None
    seed: int = 0
    stride: int = 1
    max_norm: float = 1e6

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f'must be positive, got {self.dt}', field='dt')
        if not self.friction > 0:
            raise ConfigError(f'must be positive, got {self.friction}', field='friction')
        if not self.mass > 0:
            raise ConfigError(f'must be positive, got {self.mass}', field='mass')
        if not self.kbt >= 0:
            raise ConfigError(f'must be non-negative, got {self.kbt}', field='kbt')
        if self.n_steps < 0:
            raise ConfigError(f'must be non-negative, got {self.n_steps}', field='n_steps')
        if self.n_replicas is not None and self.n_replicas < 1:
            raise ConfigError(f'must be positive, got {self.n_replicas}', field='n_replicas')
        if self.stride < 1:
            raise ConfigError(f'must be positive, got {self.stride}', field='stride')
        if not self.max_norm > 0:
            raise ConfigError(f'must be positive, got {self.max_norm}', field='max_norm')
        if not np.isfinite(self.diffusivity):
            raise ConfigError('k_BT / (friction * mass) is not finite', field='kbt')

    @property
    def zeta(self):
        return self.friction * self.mass

    @property
    def diffusivity(self):
        return self.kbt / self.zeta

    @classmethod
    def mueller_brown(cls, **overrides):
        """Mueller-Brown dataset generation: 1,000 replicas of 1,000 steps at k_BT = 1."""
        values = dict(dt=0.01, friction=1.0, mass=1.0, kbt=1.0, n_steps=1000, n_replicas=1000)
        values.update(overrides)
        return cls(**values)


@dataclass
class Trajectory:
    """Saved states of one replica, shape (n_saved, k)."""
    replica: int
    states: np.ndarray
    stride: int = 1
    config_digest: str = None
    steps: np.ndarray = dataclass_field(default=None, repr=False)

    def __post_init__(self):
        self.states = np.atleast_2d(as_array(self.states))
        if not check_finite(self.states):
            raise IntegrationError(f'replica {self.replica} holds non-finite states')
        if self.steps is None:
            self.steps = np.arange(len(self.states)) * self.stride

    def __len__(self):
        return len(self.states)


def em_step(field, state, cfg, rng):
    """
    One Euler-Maruyama step for a single state.

    Parameters
    ----------
    field : omtps.fields.DriftField
        Drift provider
    state : array-like, shape (k,)
        Current state
    cfg : SimConfig
        Timestep, friction, mass and temperature
    rng : np.random.Generator
        Source of the Gaussian variate

    Returns
    -------
    state : np.ndarray
        The next state

    Raises
    ------
    IntegrationError
        If the drift at `state` is not finite
    """
    state = as_array(state)
    force = as_array(field.drift(as_tensor(state)))
    if not check_finite(force):
        logger.error(f'non-finite drift {force} at {state}')
        raise IntegrationError(f'non-finite drift at {state.tolist()}',
                               details={'state': state.tolist()})
    noise = rng.standard_normal(state.shape)
    return state + cfg.dt / cfg.zeta * force + np.sqrt(2 * cfg.diffusivity * cfg.dt) * noise


def replica_rngs(seed, n_replicas):
    """Independent PCG64 generators seeded `seed ^ replica_index`."""
    return [np.random.Generator(np.random.PCG64(seed ^ index)) for index in range(n_replicas)]


def _replica_inits(inits, cfg):
    inits = np.atleast_2d(as_array(inits))
    if len(inits) == 0 or inits.size == 0:
        raise ConfigError('at least one initial state is required', field='inits')
    if not check_finite(inits):
        raise ConfigError('initial states must be finite', field='inits')
    n_replicas = cfg.n_replicas or len(inits)
    return inits[np.arange(n_replicas) % len(inits)]


def simulate(field, inits, cfg, progress=False):
    """
    Integrate independent replicas of the overdamped Langevin equation.

    Parameters
    ----------
    field : omtps.fields.DriftField
        Drift provider, evaluated in batch over all replicas at every step
    inits : array-like, shape (n, k)
        Initial states, cycled to `cfg.n_replicas` replicas when that is set
    cfg : SimConfig
        Run parameters
    progress : bool, optional
        Show a tqdm progress bar over steps

    Returns
    -------
    trajectories : list of Trajectory
        One trajectory per replica with `n_steps // stride + 1` saved states

    Raises
    ------
    IntegrationError
        If any replica produces a non-finite state or leaves the ball of radius `cfg.max_norm`;
        the replica and step index are reported
    """
    states = _replica_inits(inits, cfg).copy()
    n_replicas, dim = states.shape
    rngs = replica_rngs(cfg.seed, n_replicas)
    digest = config_digest(cfg.to_dict())
    step_size = cfg.dt / cfg.zeta
    noise_scale = np.sqrt(2 * cfg.diffusivity * cfg.dt)
    logger.info(f'simulating {n_replicas} replicas for {cfg.n_steps} steps '
                f'(dt={cfg.dt}, zeta={cfg.zeta}, D={cfg.diffusivity})')

    saved = [states.copy()]
    noise = None
    for step in tqdm(range(cfg.n_steps), disable=not progress, desc='simulate'):
        offset = step % NOISE_CHUNK
        if offset == 0:
            chunk = min(NOISE_CHUNK, cfg.n_steps - step)
            noise = np.stack([rng.standard_normal((chunk, dim)) for rng in rngs], axis=1)
        force = as_array(field.drift(as_tensor(states)))
        states = states + step_size * force + noise_scale * noise[offset]
        norms = np.linalg.norm(states, axis=1)
        bad = ~np.isfinite(norms) | (norms > cfg.max_norm)
        if bad.any():
            replica = int(np.flatnonzero(bad)[0])
            logger.error(f'replica {replica} left the integration domain at step {step + 1}: '
                         f'{states[replica]}')
            raise IntegrationError(
                f'replica {replica} diverged at step {step + 1} (norm {norms[replica]:.3g})',
                details={'replica': replica, 'step': step + 1,
                         'state': states[replica].tolist()})
        if (step + 1) % cfg.stride == 0:
            saved.append(states.copy())

    saved = np.stack(saved, axis=1)
    return [
        Trajectory(replica=index, states=saved[index], stride=cfg.stride, config_digest=digest)
        for index in range(n_replicas)
    ]


def pool_states(trajs):
    """Concatenate the states of trajectories (or pass through a point array) in replica order."""
    if isinstance(trajs, np.ndarray):
        return np.atleast_2d(trajs)
    if not trajs:
        return np.empty((0, 0))
    return np.concatenate([traj.states for traj in trajs], axis=0)


def split_dataset(trajs, fraction, seed=None):
    """
    Split pooled trajectory states into training and validation sets.

    Parameters
    ----------
    trajs : list of Trajectory or np.ndarray
        Trajectories (pooled in replica order) or an array of points
    fraction : float
        Share of points assigned to the training set, 0 < fraction < 1
    seed : int, optional
        If given, points are shuffled with this seed before splitting; otherwise the split keeps
        the pooled order

    Returns
    -------
    train, validation : np.ndarray
        Disjoint point sets whose sizes are round(fraction * n) and the rest
    """
    if not 0 < fraction < 1:
        raise ConfigError(f'must lie in (0, 1), got {fraction}', field='fraction')
    points = pool_states(trajs)
    if len(points) == 0:
        raise ConfigError('cannot split an empty dataset', field='trajs')
    if seed is not None:
        points = points[np.random.default_rng(seed).permutation(len(points))]
    n_train = int(np.floor(fraction * len(points) + 0.5))
    return points[:n_train], points[n_train:]


def coordinate_columns(dim):
    return [f'x{i}' for i in range(dim)]


def trajectories_to_frame(trajs):
    """Long-format DataFrame with one row per saved state: replica, step, x0, x1, ..."""
    frames = []
    for traj in trajs:
        frame = pd.DataFrame(traj.states, columns=coordinate_columns(traj.states.shape[1]))
        frame.insert(0, 'step', traj.steps)
        frame.insert(0, 'replica', traj.replica)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def frame_to_trajectories(frame, stride=1, digest=None):
    """Inverse of `trajectories_to_frame`."""
    columns = [column for column in frame.columns if column not in ('replica', 'step')]
    return [
        Trajectory(replica=int(replica), states=group[columns].to_numpy(dtype=np.float64),
                   stride=stride, config_digest=digest, steps=group['step'].to_numpy())
        for replica, group in frame.groupby('replica', sort=True)
    ]


def save_trajectories(file_path, trajs, cfg, field_config=None):
    """
    Write trajectories as CSV with a JSON sidecar holding the SimConfig and field description.

    Returns
    -------
    written : list of pathlib.Path
    """
    frame = trajectories_to_frame(trajs)
    frame.to_csv(file_path, index=False, float_format=CSV_FLOAT_FORMAT)
    sidecar = pathlib.Path(file_path).with_suffix('.json')
    metadata = {'sim_config': cfg.to_dict(), 'config_digest': config_digest(cfg.to_dict())}
    if field_config is not None:
        metadata['field'] = field_config
    write_json(sidecar, metadata)
    return [file_path, sidecar]


def load_trajectories(file_path):
    """
    Read trajectories written by `save_trajectories`.

    Returns
    -------
    trajectories : list of Trajectory
    cfg : SimConfig
    metadata : dict
    """
    frame = pd.read_csv(file_path, float_precision='round_trip')
    sidecar = pathlib.Path(file_path).with_suffix('.json')
    metadata = read_json(sidecar)
    cfg = SimConfig.from_dict(metadata['sim_config'])
    return frame_to_trajectories(frame, cfg.stride, metadata.get('config_digest')), cfg, metadata
