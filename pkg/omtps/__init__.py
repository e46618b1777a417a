__version__ = '0.1.0'

from .action import OMParams, OptimConfig, Path, om_action, optimize_path
from .committor import CommittorGrid, RegionSpec, estimate_rate, solve_bke_grid
from .fields import DriftField, MuellerBrownPotential, field_from_config
from .langevin import SimConfig, simulate
from .models import ScoreModel, ddpm_train, flow_train
from .msm import MSM, Clustering, fit_clusters, fit_msm
