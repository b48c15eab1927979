"""Event-driven training for time-to-first-spike spiking networks."""

from .neuron import (
    FiringSolution,
    MembraneTrace,
    NeuronModelConfig,
    SpikeVector,
    Variant,
    membrane_potential_at,
    ode_oracle_simulate,
    solve_firing_time,
)
from .layers import (
    ConvLayerParams,
    DenseLayerParams,
    ForwardTrace,
    NetworkSpec,
    PoolSpec,
    build_network,
    forward_batch,
    network_forward,
    parse_architecture,
)
from .backprop import NetworkGradients, network_backward
from .objectives import CostConfig, LossReport, total_cost
from .training import AdamState, MetricsRow, TrainConfig, adam_step, evaluate, train
from .data import Dataset, iris_dataset, mnist_dataset
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "FiringSolution",
    "MembraneTrace",
    "NeuronModelConfig",
    "SpikeVector",
    "Variant",
    "membrane_potential_at",
    "ode_oracle_simulate",
    "solve_firing_time",
    "ConvLayerParams",
    "DenseLayerParams",
    "ForwardTrace",
    "NetworkSpec",
    "PoolSpec",
    "build_network",
    "forward_batch",
    "network_forward",
    "parse_architecture",
    "NetworkGradients",
    "network_backward",
    "CostConfig",
    "LossReport",
    "total_cost",
    "AdamState",
    "MetricsRow",
    "TrainConfig",
    "adam_step",
    "evaluate",
    "train",
    "Dataset",
    "iris_dataset",
    "mnist_dataset",
    "load_checkpoint",
    "save_checkpoint",
]

__version__ = "0.1.0"
