from .autodiff import GradientError, Tensor, parameter
from .dirichlet import (
    DesiredDistribution,
    desired_to_counts,
    dirichlet_entropy,
    dirichlet_log_prob,
    sample_desired,
    sample_dirichlet,
)
from .gnn import CheckpointError, GraphConvPolicy, PolicyConfig, normalized_adjacency

__all__ = [
    "CheckpointError",
    "DesiredDistribution",
    "GradientError",
    "GraphConvPolicy",
    "PolicyConfig",
    "Tensor",
    "desired_to_counts",
    "dirichlet_entropy",
    "dirichlet_log_prob",
    "normalized_adjacency",
    "parameter",
    "sample_desired",
    "sample_dirichlet",
]
