"""Self-supervised heterogeneous graph embeddings by aligning optimal-transport
plans between meta-path views and their aggregate, in graph space and in
representation space."""

from .encoder import EncoderConfig, HGOTEncoder
from .errors import ConfigError, DataError, HGOTError, NumericalError, StateError
from .hetgraph import (
    HeteroGraph,
    MetaPath,
    SyntheticConfig,
    aggregate_adjacency,
    build_views,
    generate_synthetic,
    load_heterograph,
    write_heterograph,
)
from .objective import AblationMode, LossWeights, TrainConfig, train
from .transport import FgwProblem, Marginals, SolverConfig, fgw_solve, sinkhorn_plan

__all__ = [
    "AblationMode",
    "ConfigError",
    "DataError",
    "EncoderConfig",
    "FgwProblem",
    "HGOTEncoder",
    "HGOTError",
    "HeteroGraph",
    "LossWeights",
    "Marginals",
    "MetaPath",
    "NumericalError",
    "SolverConfig",
    "StateError",
    "SyntheticConfig",
    "TrainConfig",
    "aggregate_adjacency",
    "build_views",
    "fgw_solve",
    "generate_synthetic",
    "load_heterograph",
    "sinkhorn_plan",
    "train",
    "write_heterograph",
]
__version__ = "0.1.0"
