# Optimize Mueller-Brown transition paths between the two deepest minima at several diffusivities
# and compare the barriers they cross. The divergence term weighs in with D and pulls path points
# towards convex regions, which raises the highest point of a converged path.
import argparse
import logging

import numpy as np
import pandas as pd
from tqdm import tqdm

from omtps.action import OMParams, OptimConfig, Path, barrier_energy, optimize_path
from omtps.fields import MuellerBrownPotential, potential

logger = logging.getLogger(__name__)

DIFFUSIVITIES = [0.0, 1.0, 4.0]


def sweep(diffusivities, L, n_steps, seeds):
    """One optimized path per diffusivity and seed, started from the straight line."""
    field = MuellerBrownPotential()
    x0, xL = field.minima()[:2]
    saddles = field.saddles()
    cfg = OptimConfig(n_steps=n_steps, learning_rate=0.2, tolerance=0.0)
    rows = []
    for diffusivity in tqdm(diffusivities):
        for seed in seeds:
            params = OMParams.mueller_brown(diffusivity, divergence='hutchinson', seed=seed)
            result = optimize_path(Path(np.linspace(x0, xL, L + 1)), field, params, cfg)
            top = result.path.points[np.argmax(potential(field, result.path.points))]
            rows.append({
                'diffusivity': diffusivity,
                'seed': seed,
                'variant': params.variant,
                'action': result.action,
                'barrier': barrier_energy(field, result.path),
                'saddle_distance': float(np.linalg.norm(saddles - top, axis=1).min()),
            })
    return pd.DataFrame(rows)


def main():
    parser = argparse.ArgumentParser(description='Sweep the diffusivity of Mueller-Brown paths.')
    parser.add_argument('-d', '--diffusivities', type=float, nargs='+', default=DIFFUSIVITIES)
    parser.add_argument('-L', '--segments', type=int, default=50,
                        help='Number of path segments.')
    parser.add_argument('-n', '--n-steps', type=int, default=1000, help='Optimizer steps.')
    parser.add_argument('-s', '--seeds', type=int, nargs='+', default=[0, 1, 2, 3, 4],
                        help='Seeds of the Hutchinson probe stream.')
    parser.add_argument('-o', '--output', default=None, help='Optional CSV file for the table.')
    args = parser.parse_args()
    logging.basicConfig(format='%(asctime)s %(message)s', level=logging.INFO)

    table = sweep(args.diffusivities, args.segments, args.n_steps, args.seeds)
    print(table.groupby('diffusivity')[['action', 'barrier', 'saddle_distance']].mean())
    if args.output:
        table.to_csv(args.output, index=False)
        logger.info(f'wrote {args.output}')


if __name__ == '__main__':
    main()
