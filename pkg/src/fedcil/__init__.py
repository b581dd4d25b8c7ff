"""Federated class-incremental intrusion detection toolkit."""

from .cil import (CentralizedTrainer, CilReport, FederatedTrainer, TaskSchedule,
                  build_schedule, generate_synthetic, run_cil)
from .dataset import Dataset, load_flow_csv, normalize, partition, stratified_split
from .fed import FedConfig, aggregate, run_federation, sample_clients
from .flows import FEATURE_NAMES, assemble_flows, featurize_flow
from .metrics import ConfusionMatrix, MetricsRow, binary_collapse, confusion_matrix, derive_metrics
from .nn import Batch, MlpModel, mlp_init
from .replay import ClearConfig, ReplayBuffer, ReplayEntry, clear_train_step
from .vtrace import Trajectory, compute_vtrace, policy_gradient_loss

__version__ = "0.1.0"

__all__ = [
    "Batch", "CentralizedTrainer", "CilReport", "ClearConfig", "ConfusionMatrix",
    "Dataset", "FEATURE_NAMES", "FedConfig", "FederatedTrainer", "MetricsRow",
    "MlpModel", "ReplayBuffer", "ReplayEntry", "TaskSchedule", "Trajectory",
    "aggregate", "assemble_flows", "binary_collapse", "build_schedule",
    "clear_train_step", "compute_vtrace", "confusion_matrix", "derive_metrics",
    "featurize_flow", "generate_synthetic", "load_flow_csv", "mlp_init",
    "normalize", "partition", "policy_gradient_loss", "run_cil",
    "run_federation", "sample_clients", "stratified_split",
]
