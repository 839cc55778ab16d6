"""Joint manifold clustering and subspace embedding with coding-rate objectives.

Train an MLP encoder so that features from different clusters occupy
orthogonal subspaces of the unit sphere: maximize the coding rate of the
whole batch, minimize the assignment-weighted per-cluster rates, and keep
augmented views of the same sample aligned.
"""

__version__ = "0.1.0"

from . import autodiff, data, evaluation, model, objectives, training
from .autodiff import Var, finite_diff_check
from .data import Dataset, double_spiral, gaussian_augment, random_mlp_manifolds
from .evaluation import MetricReport, evaluate_clustering
from .model import MlpSpec, forward, init_mlp, load_checkpoint, save_checkpoint
from .objectives import (
    CodingRateParams,
    clustering_loss,
    coding_rate,
    per_cluster_rate,
    rate_reduction,
    tcr_loss,
    view_alignment_penalty,
)
from .training import RunRecord, StageConfig, multistage_train, train_stage
