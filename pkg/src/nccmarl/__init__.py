"""Cooperative multi-agent RL with neighborhood-consistent latent cognition.

Value-decomposition Q-learning (`nccq`) and deterministic actor-critic
(`nccac`) learners whose agents share a graph-convolutional view of their
neighborhood and are regularized toward consistent latent cognition
distributions, plus simulated packet-routing and wifi power environments
and an experiment harness with a CLI.
"""

from .autodiff import (
    DomainError,
    MissingGradientError,
    Optimizer,
    OptimizerConfig,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
    constant,
    elementwise,
    matmul,
    no_grad,
    parameter,
    reduce,
    sgd_adam_step,
)
from .graph import AgentGraph, GcnLayer, gcn_forward

__version__ = "0.1.0"

__all__ = [
    "AgentGraph",
    "DomainError",
    "GcnLayer",
    "MissingGradientError",
    "Optimizer",
    "OptimizerConfig",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "backward",
    "constant",
    "elementwise",
    "gcn_forward",
    "matmul",
    "no_grad",
    "parameter",
    "reduce",
    "sgd_adam_step",
    "__version__",
]
