"""Sequential ensembles of sparse Bayesian neural networks, in NumPy."""

from .config import ConfigError, RunConfig, load_config
from .layers import GaussianConv2d, GaussianLayer, PriorConfig, SpikeSlabConv2d, SpikeSlabLayer
from .model import LayerSpec, Network, NetworkSpec, mlp_spec
from .numeric import RngStream
from .objective import ElboConfig, SgdMomentum, elbo_gradients, elbo_loss
from .schedule import PhaseEvent, PhasePlan, event_at, lr_at
from .trainer import BaseLearnerSnapshot, SnapshotError, TrainerConfig, TrainingDivergence, train

__all__ = [
    "BaseLearnerSnapshot", "ConfigError", "ElboConfig", "GaussianConv2d", "GaussianLayer",
    "LayerSpec", "Network", "NetworkSpec", "PhaseEvent", "PhasePlan", "PriorConfig", "RngStream",
    "RunConfig", "SgdMomentum", "SnapshotError", "SpikeSlabConv2d", "SpikeSlabLayer",
    "TrainerConfig", "TrainingDivergence", "elbo_gradients", "elbo_loss", "event_at", "load_config",
    "lr_at", "mlp_spec", "train",
]
