"""
Command-line pipeline: simulate -> train -> sample-path -> committor -> msm-eval, plus plot-data
export and a recipe runner chaining every stage.

Each subcommand reads one section of a JSON run configuration, writes its artifacts into `--out`
and records them in a manifest.json (subcommand, config digest, seed, tool version, duration and
the sha256 of every input and output). Inputs produced by an upstream subcommand are checked
against their manifest before use.

Example
-------
    omtps simulate --config recipe.json --out runs/simulate
    omtps run-recipe --config recipe.json --out runs --seed 3
"""
import argparse
from dataclasses import replace
from datetime import datetime, timezone
import logging
import pathlib
import sys
import time

import numpy as np
import pandas as pd
import torch

from . import __version__
from .action import (BUNDLE_INDEX, FULL, TRUNCATED, OMParams, OptimConfig, Path,
                     coordinate_columns, initial_guess_unwrap, load_bundle, load_path,
                     optimize_path, sample_transition_paths, save_bundle)
from .committor import (CommittorConfig, GridSpec, RegionSpec, WeightedSamples, default_gamma,
                        default_regions, estimate_rate, grid_rate, load_committor_grid, reweight,
                        save_committor_grid, save_neural_committor, seed_sampling_from_path,
                        solve_bke_grid, train_committor)
from .exceptions import ConfigError, NumericalError, OmtpsError, StaleArtifactError
from .fields import MuellerBrownPotential, field_from_config, padded_bounds, potential
from .langevin import (SimConfig, load_trajectories, pool_states, save_trajectories, simulate,
                       split_dataset)
from .models import (DDPM, FLOW, ScoreField, TrainConfig, ddpm_train, flow_train, load_checkpoint,
                     save_checkpoint, schedule_from_dict)
from .msm import (DEFAULT_N_STATES, DEFAULT_PATH_LENGTH, discretize_paths, evaluate_paths,
                  fit_clusters, fit_msm, sample_bridge, save_msm)
from .utils import (CSV_FLOAT_FORMAT, check_keys, config_digest, ensure_dir,
                    get_nested_dict_item, read_json, verify_artifact, write_json, write_manifest)

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
SECTIONS = ('field', 'simulate', 'train', 'sample_path', 'committor', 'msm_eval', 'export')
RECIPE_STAGES = ('simulate', 'train', 'sample_path', 'committor', 'msm_eval')
EXPORT_KINDS = ('potential', 'path', 'committor', 'samples')

ANALYTIC_SAMPLING = 'analytic'
LEARNED_SAMPLING = 'learned'
SAMPLING_FIELDS = (ANALYTIC_SAMPLING, LEARNED_SAMPLING)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_STALE = 4
EXIT_OTHER = 1

TRAJECTORIES_FILE = 'trajectories.csv'
CHECKPOINT_FILE = 'model.ckpt'
BUNDLE_DIR = 'bundle'
GRID_FILE = 'committor_grid.csv'
NEURAL_FILE = 'neural_committor.bin'
RATE_FILE = 'rate_report.json'
MSM_FILE = 'msm.json'
METRICS_FILE = 'metrics.json'


def load_config(file_path):
    """Read a run configuration, checking its version and top-level sections."""
    try:
        config = read_json(file_path)
    except OSError as ex:
        raise ConfigError(f'cannot read {file_path}: {ex.strerror}', field='config') from ex
    except ValueError as ex:
        raise ConfigError(f'{file_path} is not valid JSON: {ex}', field='config') from ex
    check_keys(config, ('version', ) + SECTIONS, required=('version', ))
    if config['version'] != CONFIG_VERSION:
        raise ConfigError(f'unsupported config version {config["version"]}, expected '
                          f'{CONFIG_VERSION}', field='version')
    return config


def section(config, name, allowed, required=()):
    values = get_nested_dict_item(config, [name], allow_missing_keys=True, default=None)
    values = {} if values is None else values
    check_keys(values, allowed, required, section=name)
    return values


def build_field(config):
    values = get_nested_dict_item(config, ['field'], allow_missing_keys=True, default=None)
    return field_from_config(values or {'kind': MuellerBrownPotential.kind})


def _seeded(values, seed, key='seed'):
    values = dict(values)
    if seed is not None:
        values[key] = seed
    return values


def _region_center(region):
    if hasattr(region, 'center'):
        return np.asarray(region.center)
    return 0.5 * (np.asarray(region.lower) + np.asarray(region.upper))


def _endpoint(values, key, field, index):
    if key in values:
        return np.asarray(values[key], dtype=np.float64)
    if not hasattr(field, 'minima'):
        raise ConfigError('required field is missing', field=f'sample_path.{key}')
    return field.minima()[index]


class Run:
    """Bookkeeping of one subcommand invocation: verified inputs, outputs and its manifest."""
    def __init__(self, subcommand, config, out_dir, seed=None):
        self.subcommand = subcommand
        self.config = config
        self.out_dir = ensure_dir(out_dir)
        self.seed = seed
        self.inputs = {}
        self.outputs = []
        self.started = time.perf_counter()

    def verified(self, file_path):
        """Check an upstream artifact against its manifest and record it as an input."""
        file_path = pathlib.Path(file_path)
        self.inputs[str(file_path)] = verify_artifact(file_path)
        return file_path

    def verified_bundle(self, directory):
        directory = pathlib.Path(directory)
        index = read_json(self.verified(directory / BUNDLE_INDEX))
        for i in range(index['n_paths']):
            for suffix in ('csv', 'json'):
                self.verified(directory / f'path_{i:03d}.{suffix}')
        return load_bundle(directory)

    def add(self, written):
        self.outputs += [pathlib.Path(p).relative_to(self.out_dir) for p in written]

    def finish(self, directory=None, outputs=None):
        directory = self.out_dir if directory is None else pathlib.Path(directory)
        manifest = {
            'subcommand': self.subcommand,
            'config_digest': config_digest(self.config),
            'seed': self.seed,
            'version': __version__,
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'duration_seconds': time.perf_counter() - self.started,
            'inputs': self.inputs,
            'outputs': [str(p) for p in (self.outputs if outputs is None else outputs)],
        }
        manifest_path = write_manifest(directory, manifest)
        logger.info(f'{self.subcommand}: wrote {len(manifest["outputs"])} artifacts to '
                    f'{directory}')
        return manifest_path


def cmd_simulate(config, out_dir, seed=None, progress=True):
    """Simulate Langevin replicas of the configured field and write trajectories.csv."""
    values = section(config, 'simulate', ('sim', 'inits'), required=('sim', ))
    field = build_field(config)
    cfg = SimConfig.from_dict(_seeded(values['sim'], seed), section='simulate.sim')
    if 'inits' in values:
        inits = np.asarray(values['inits'], dtype=np.float64)
    elif hasattr(field, 'minima'):
        inits = field.minima()
    else:
        inits = np.zeros((1, field.dim))
    run = Run('simulate', config, out_dir, seed)
    trajs = simulate(field, inits, cfg, progress=progress)
    run.add(save_trajectories(run.out_dir / TRAJECTORIES_FILE, trajs, cfg, field.to_config()))
    return run.finish()


def cmd_train(config, out_dir, seed=None, progress=True):
    """Train a DDPM or flow-matching model on simulated states and write model.ckpt."""
    values = section(config, 'train', ('trajectories', 'variant', 'schedule', 'config', 'split'),
                     required=('trajectories', ))
    variant = values.get('variant', DDPM)
    if variant not in (DDPM, FLOW):
        raise ConfigError(f'unknown variant {variant!r}', field='train.variant')
    schedule = schedule_from_dict(values.get('schedule', {'kind': variant}))
    cfg = TrainConfig.from_dict(_seeded(values.get('config', {}), seed), section='train.config')
    run = Run('train', config, out_dir, seed)
    trajs, _, _ = load_trajectories(run.verified(values['trajectories']))
    data = pool_states(trajs)
    if 'split' in values:
        data, validation = split_dataset(data, values['split'], seed=cfg.seed)
        logger.info(f'training on {len(data)} points, holding out {len(validation)}')
    train = ddpm_train if variant == DDPM else flow_train
    model = train(data, schedule, cfg, progress=progress)
    checkpoint = run.out_dir / CHECKPOINT_FILE
    save_checkpoint(checkpoint, model)
    run.add([checkpoint])
    return run.finish()


def _linear_path(x0, xL, L):
    return Path(np.linspace(x0, xL, L + 1))


def _optimize_analytic(field, x0, xL, values, params, cfg, seed, progress):
    initial = values.get('initial', 'linear')
    L = values.get('L', 50)
    results = []
    for replicate in range(values.get('n_paths', 1)):
        replicate_params = replace(params, seed=params.seed + replicate)
        if initial == 'linear':
            guess = _linear_path(x0, xL, L)
        elif initial == 'unwrap':
            unwrap = values.get('unwrap', {})
            check_keys(unwrap, ('L1', 'N'), section='sample_path.unwrap')
            guess = initial_guess_unwrap(x0, xL, unwrap.get('L1', 2), unwrap.get('N', 5), field,
                                         replicate_params, cfg, progress=progress)
        else:
            raise ConfigError(f'unknown initial guess {initial!r} for an analytic field',
                              field='sample_path.initial')
        generator = torch.Generator().manual_seed(seed + replicate)
        results.append(
            optimize_path(guess, field, replicate_params, cfg, rng=generator, progress=progress))
    return results


def cmd_sample_path(config, out_dir, seed=None, progress=True):
    """
    Optimize transition paths and write one bundle per diffusivity: `bundle/` or, for a sweep,
    `bundle_D<value>/`, each with its own manifest.
    """
    values = section(config, 'sample_path',
                     ('checkpoint', 'x0', 'xL', 'L', 'n_paths', 'initial', 'unwrap', 'latent',
                      'om', 'optim', 'diffusivities', 'seed'))
    override = seed is not None
    seed = values.get('seed', 0) if seed is None else seed
    field = build_field(config)
    run = Run('sample_path', config, out_dir, seed)
    model = None
    if values.get('checkpoint'):
        model = load_checkpoint(run.verified(values['checkpoint']))
    x0 = _endpoint(values, 'x0', field, 0)
    xL = _endpoint(values, 'xL', field, 1)

    if model is None:
        cfg = OptimConfig.from_dict(values.get('optim', {}), section='sample_path.optim')
        params = (OMParams.from_dict(values['om'], section='sample_path.om')
                  if 'om' in values else OMParams.mueller_brown())
    else:
        cfg = (OptimConfig.from_dict(values['optim'], section='sample_path.optim')
               if 'optim' in values else OptimConfig.mueller_brown())
        if 'om' in values:
            params = OMParams.from_dict(values['om'], section='sample_path.om')
        elif model.variant == DDPM and cfg.tau_opt is not None:
            params = OMParams.latent(model.schedule, cfg.tau_opt)
        else:
            raise ConfigError('required field is missing', field='sample_path.om')
    if override or 'seed' not in values.get('om', {}):
        params = replace(params, seed=seed)

    sweep = values.get('diffusivities')
    manifests = []
    for diffusivity in (sweep if sweep is not None else [None]):
        sweep_params = params
        directory = run.out_dir / BUNDLE_DIR
        if diffusivity is not None:
            sweep_params = replace(params, diffusivity=diffusivity,
                                   variant=FULL if diffusivity > 0 else TRUNCATED)
            directory = run.out_dir / f'{BUNDLE_DIR}_D{diffusivity:g}'
        logger.info(f'sampling paths with D = {sweep_params.diffusivity}')
        if model is None:
            results = _optimize_analytic(field, x0, xL, values, sweep_params, cfg, seed, progress)
        else:
            results = sample_transition_paths(model, x0, xL, sweep_params, cfg,
                                              values.get('L', 50), values.get('n_paths', 1),
                                              seed=seed, latent=values.get('latent', True),
                                              progress=progress)
        written = save_bundle(directory, results, sweep_params, cfg,
                              extra={'diffusivity': sweep_params.diffusivity, 'seed': seed})
        manifests.append(
            run.finish(directory, [pathlib.Path(p).relative_to(directory) for p in written]))
    return manifests[0] if len(manifests) == 1 else manifests


def _inside(samples, spec):
    inside = np.all((samples.points >= spec.lower) & (samples.points <= spec.upper), axis=1)
    if inside.all():
        return samples
    logger.warning(f'{np.count_nonzero(~inside)} samples lie outside the committor grid and are '
                   'left out of its rate estimate')
    weights = samples.weights[inside]
    return WeightedSamples(samples.points[inside], weights / weights.sum())


def _sampling_field(sampling, field, kbt, run):
    """Drift for the committor sampling runs: the analytic field or a learned score at tau = 0."""
    kind = sampling.pop('field', ANALYTIC_SAMPLING)
    checkpoint = sampling.pop('checkpoint', None)
    if kind == ANALYTIC_SAMPLING:
        return field
    if kind != LEARNED_SAMPLING:
        raise ConfigError(f'unknown sampling field {kind!r}, expected one of '
                          f'{SAMPLING_FIELDS}', field='committor.sampling.field')
    if checkpoint is None:
        raise ConfigError('a learned sampling field needs a checkpoint',
                          field='committor.sampling.checkpoint')
    model = load_checkpoint(run.verified(checkpoint))
    if model.dim != field.dim:
        raise ConfigError(f'checkpoint dimension {model.dim} does not match the field',
                          field='committor.sampling.checkpoint')
    tau = sampling.pop('tau', 0 if model.variant == DDPM else None)
    if tau is None:
        raise ConfigError('flow checkpoints need a latent time in (0, 1)',
                          field='committor.sampling.tau')
    logger.info(f'sampling with the learned {model.variant} score at tau = {tau}')
    return ScoreField(model, tau, scale=kbt)


def cmd_committor(config, out_dir, seed=None, progress=True):
    """
    Solve the grid committor, sample around a transition path, reweight the samples to the
    Boltzmann distribution and estimate the rate. Writes committor_grid.csv, rate_report.json
    and, with a `neural` section, neural_committor.bin.

    The sampling runs follow the analytic field unless `sampling.field` is "learned", in which
    case they follow the score of `sampling.checkpoint` at tau = 0, scaled by k_BT.
    """
    values = section(config, 'committor',
                     ('bundle', 'kbt', 'gamma', 'regions', 'grid', 'sampling', 'reweight_bins',
                      'neural'))
    field = build_field(config)
    kbt = values.get('kbt', 1.0)
    gamma = values.get('gamma', default_gamma(field))
    run = Run('committor', config, out_dir, seed)

    regions_values = values.get('regions', {})
    if 'a' in regions_values:
        regions = RegionSpec.from_dict(regions_values)
    else:
        regions = default_regions(field, regions_values.get('radius', 2.0))
    spec = (GridSpec.from_dict(values['grid'], section='committor.grid')
            if 'grid' in values else GridSpec.around(field))
    grid = solve_bke_grid(field, regions, spec, kbt)
    run.add(save_committor_grid(run.out_dir / GRID_FILE, grid))
    report = {'grid_rate': grid_rate(grid, gamma), 'kbt': kbt, 'gamma': gamma}

    if 'bundle' in values:
        paths, _ = run.verified_bundle(values['bundle'])
        path = paths[0]
    else:
        path = _linear_path(_region_center(regions.a), _region_center(regions.b), 50)
    sampling = _seeded(values.get('sampling', {'dt': 0.01, 'friction': gamma, 'kbt': kbt}), seed)
    sampling_field = _sampling_field(sampling, field, kbt, run)
    sim_cfg = SimConfig.from_dict(sampling, section='committor.sampling')
    points = seed_sampling_from_path(path, sampling_field, sim_cfg, progress=progress)
    samples = reweight(points, field, kbt, values.get('reweight_bins', 100))
    report.update({
        'n_samples': len(samples),
        'effective_sample_size': samples.effective_size(),
        'sampled_rate_grid': estimate_rate(grid, _inside(samples, spec), kbt, gamma),
    })
    if 'neural' in values:
        cfg = CommittorConfig.from_dict(_seeded(values['neural'], seed),
                                        section='committor.neural')
        model = train_committor(samples, regions, cfg, progress=progress)
        save_neural_committor(run.out_dir / NEURAL_FILE, model)
        run.add([run.out_dir / NEURAL_FILE])
        report['sampled_rate_neural'] = estimate_rate(model, samples, kbt, gamma)
    write_json(run.out_dir / RATE_FILE, report)
    run.add([run.out_dir / RATE_FILE])
    logger.info(f'rates: {report}')
    return run.finish()


def _reference_bridges(msm, dpaths, n_reference, rng):
    per_path = max(1, -(-n_reference // len(dpaths)))
    return np.concatenate([
        sample_bridge(msm, path[0], path[-1], len(path), per_path, rng) for path in dpaths
    ])


def cmd_msm_eval(config, out_dir, seed=None, progress=True):  # pylint: disable=unused-argument
    """
    Fit a reference MSM on simulated trajectories and score a path bundle with it. Reference state
    distributions come from `reference_bundle` when given, else from MSM bridges between the
    generated paths' end states. Writes msm.json and metrics.json.
    """
    values = section(config, 'msm_eval',
                     ('trajectories', 'bundle', 'reference_bundle', 'k', 'lag', 'length',
                      'n_reference', 'seed'), required=('trajectories', 'bundle'))
    seed = values.get('seed', 0) if seed is None else seed
    run = Run('msm_eval', config, out_dir, seed)
    trajs, _, _ = load_trajectories(run.verified(values['trajectories']))
    clustering = fit_clusters(pool_states(trajs), values.get('k', DEFAULT_N_STATES), seed)
    msm = fit_msm(trajs, clustering, values.get('lag', 1))
    save_msm(run.out_dir / MSM_FILE, msm, clustering)

    length = values.get('length', DEFAULT_PATH_LENGTH)
    paths, _ = run.verified_bundle(values['bundle'])
    dpaths = discretize_paths(paths, clustering, length)
    if 'reference_bundle' in values:
        reference_paths, _ = run.verified_bundle(values['reference_bundle'])
        reference = discretize_paths(reference_paths, clustering, length)
    else:
        reference = _reference_bridges(msm, dpaths, values.get('n_reference', 1000),
                                       np.random.default_rng(seed))
    report = evaluate_paths(msm, dpaths, reference)
    write_json(run.out_dir / METRICS_FILE, report)
    run.add([run.out_dir / MSM_FILE, run.out_dir / METRICS_FILE])
    return run.finish()


def _export_potential(config, run):
    values = get_nested_dict_item(config, ['export', 'potential'], allow_missing_keys=True,
                                  default=None) or {}
    check_keys(values, ('lower', 'upper', 'n'), section='export.potential')
    field = build_field(config)
    if 'lower' in values and 'upper' in values:
        lower, upper = np.asarray(values['lower']), np.asarray(values['upper'])
    else:
        lower, upper = padded_bounds(np.concatenate([field.minima(), field.saddles()]), 0.25)
    n = values.get('n', 200)
    xs, ys = np.linspace(lower[0], upper[0], n), np.linspace(lower[1], upper[1], n)
    nodes = np.stack(np.meshgrid(xs, ys, indexing='ij'), axis=-1).reshape(-1, 2)
    frame = pd.DataFrame({'x': nodes[:, 0], 'y': nodes[:, 1], 'potential': potential(field, nodes)})
    return [('potential_grid.csv', frame)]


def _export_path(input_path, run):
    input_path = pathlib.Path(input_path)
    if input_path.is_dir():
        paths, _ = run.verified_bundle(input_path)
    else:
        paths = [load_path(run.verified(input_path))[0]]
    exports = []
    for index, path in enumerate(paths):
        frame = pd.DataFrame(path.points, columns=coordinate_columns(path.dim))
        frame.insert(0, 'point', np.arange(len(path.points)))
        exports.append((f'path_{index:03d}_points.csv', frame))
    return exports


def _export_committor(input_path, run):
    grid = load_committor_grid(run.verified(input_path))
    nodes = grid.spec.nodes().reshape(-1, 2)
    frame = pd.DataFrame({'x': nodes[:, 0], 'y': nodes[:, 1], 'q': grid.q.reshape(-1)})
    return [('committor_points.csv', frame)]


def _export_samples(input_path, run):
    trajs, _, _ = load_trajectories(run.verified(input_path))
    states = pool_states(trajs)
    return [('samples.csv', pd.DataFrame(states, columns=coordinate_columns(states.shape[1])))]


def cmd_export_plot(config, out_dir, kind, input_path=None):
    """
    Export plot-ready CSV files: a gridded potential, path coordinates, committor grid values or
    pooled trajectory samples.
    """
    if kind not in EXPORT_KINDS:
        raise ConfigError(f'unknown artifact kind {kind!r}, expected one of {EXPORT_KINDS}',
                          field='kind')
    if kind != 'potential' and input_path is None:
        raise ConfigError(f'exporting {kind} needs an input artifact', field='input')
    run = Run('export_plot', config, out_dir)
    if kind == 'potential':
        exports = _export_potential(config, run)
    else:
        exporter = {'path': _export_path, 'committor': _export_committor,
                    'samples': _export_samples}[kind]
        exports = exporter(input_path, run)
    for name, frame in exports:
        frame.to_csv(run.out_dir / name, index=False, float_format=CSV_FLOAT_FORMAT)
        run.add([run.out_dir / name])
    return run.finish()


COMMANDS = {
    'simulate': cmd_simulate,
    'train': cmd_train,
    'sample_path': cmd_sample_path,
    'committor': cmd_committor,
    'msm_eval': cmd_msm_eval,
}


def cmd_run_recipe(config, out_dir, seed=None, progress=True):
    """
    Run every stage present in the configuration in pipeline order, each into `out_dir/<stage>`,
    wiring upstream artifacts into downstream sections.

    Returns
    -------
    manifests : dict of str to pathlib.Path
    """
    out_dir = ensure_dir(out_dir)
    config = dict(config)
    manifests = {}
    trajectories = out_dir / 'simulate' / TRAJECTORIES_FILE
    checkpoint = out_dir / 'train' / CHECKPOINT_FILE
    bundle = out_dir / 'sample_path' / BUNDLE_DIR
    wiring = {
        'train': {'trajectories': trajectories},
        'sample_path': {'checkpoint': checkpoint},
        'committor': {'bundle': bundle},
        'msm_eval': {'trajectories': trajectories, 'bundle': bundle},
    }
    for stage in RECIPE_STAGES:
        if stage not in config:
            continue
        values = dict(config[stage])
        for key, artifact in wiring.get(stage, {}).items():
            if key in values:
                continue
            upstream = artifact.parent.name
            if upstream in manifests:
                values[key] = str(artifact)
        sampling = values.get('sampling', {}) if stage == 'committor' else {}
        if (sampling.get('field') == LEARNED_SAMPLING and 'checkpoint' not in sampling
                and 'train' in manifests):
            values['sampling'] = dict(sampling, checkpoint=str(checkpoint))
        if stage == 'sample_path' and 'diffusivities' in values:
            values.pop('diffusivities')
            logger.warning('run-recipe samples a single bundle; the diffusivity sweep is ignored')
        config[stage] = values
        logger.info(f'recipe stage {stage}')
        manifests[stage] = COMMANDS[stage](config, out_dir / stage, seed=seed, progress=progress)
    return manifests


def exit_code(ex):
    if isinstance(ex, ConfigError):
        return EXIT_CONFIG
    if isinstance(ex, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(ex, StaleArtifactError):
        return EXIT_STALE
    return EXIT_OTHER


def build_parser():
    parser = argparse.ArgumentParser(
        prog='omtps', description='Onsager-Machlup transition path sampling pipeline')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name in ('simulate', 'train', 'sample-path', 'committor', 'msm-eval', 'export-plot',
                 'run-recipe'):
        sub = subparsers.add_parser(name)
        sub.add_argument('-c', '--config', required=name != 'export-plot',
                         help='JSON run configuration.')
        sub.add_argument('-s', '--seed', type=int, default=None,
                         help='Override every seed in the configuration (optional).')
        sub.add_argument('-t', '--threads', type=int, default=0,
                         help='Torch intra-op threads; 0 keeps the default.')
        sub.add_argument('-o', '--out', default='.', help='Directory for the artifacts.')
        sub.add_argument('-v', '--verbose', action='store_true', help='Log at debug level.')
        sub.add_argument('--no-progress', action='store_true', help='Hide progress bars.')
        if name == 'export-plot':
            sub.add_argument('-k', '--kind', required=True,
                             help=f'Artifact kind, one of {", ".join(EXPORT_KINDS)}.')
            sub.add_argument('-i', '--input', default=None,
                             help='Input artifact: path CSV, bundle directory, committor grid '
                             'CSV or trajectories CSV.')
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(format='%(asctime)s %(message)s',
                        level=logging.DEBUG if args.verbose else logging.INFO)
    if args.threads < 0:
        logger.error(f'--threads must be non-negative, got {args.threads}')
        return EXIT_CONFIG
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        config = load_config(args.config) if args.config else {'version': CONFIG_VERSION}
        progress = not args.no_progress
        if args.command == 'export-plot':
            cmd_export_plot(config, args.out, args.kind, args.input)
        elif args.command == 'run-recipe':
            cmd_run_recipe(config, args.out, seed=args.seed, progress=progress)
        else:
            COMMANDS[args.command.replace('-', '_')](config, args.out, seed=args.seed,
                                                     progress=progress)
    except OmtpsError as ex:
        logger.error(f'{args.command} failed: {ex}')
        return exit_code(ex)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
