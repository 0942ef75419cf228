"""Repair image classifiers against corruption failures.

Failures of a trained model on a corrupted test set are clustered, and
their global appearance is transferred onto clean training images inside
an AugMix-style augmentation chain that is trained with a Jensen-Shannon
consistency loss.
"""
from .augment import OperationSet, build_operation_set, style_aug
from .corruptions import CorruptionSpec, apply_corruption, build_corrupted_testset, corrupt_dataset
from .data import LabelledDataset, load_dataset, make_shapes_dataset
from .errors import *  # noqa: F401,F403
from .failures import FailureSplit, collect_failures, evaluate
from .models import ArchitectureSpec, ModelHandle, build, load_checkpoint, save_checkpoint
from .report import RepairReport, ablation_compare, cross_robustness, emit_report
from .sampling import ClusterModel, SamplingDistribution, build_sampler, fit_clusters, sampling_distribution
from .style import MomentMatching, transfer
from .training import TrainConfig, js_divergence, repair, train_base

__version__ = "0.1.0"
