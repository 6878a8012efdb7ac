"""Port-Hamiltonian structured dynamics learning from position-only observations."""

from .envs import ENV_NAMES, generate_dataset, get_env
from .factory import ModelConfig, build_model, data_stats
from .hamiltonian import KNOWN, PARTIAL, UNKNOWN, HamiltonianModel
from .metrics import rollout_eval
from .training import LossWeights, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ENV_NAMES",
    "KNOWN",
    "PARTIAL",
    "UNKNOWN",
    "HamiltonianModel",
    "LossWeights",
    "ModelConfig",
    "TrainConfig",
    "build_model",
    "data_stats",
    "generate_dataset",
    "get_env",
    "rollout_eval",
    "train",
]
