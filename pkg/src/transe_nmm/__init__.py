"""TransE-NMM: knowledge base completion with neighborhood mixture entity representations."""

from .graph import KnowledgeGraph, NeighborIndex, build_graph, build_neighbor_index
from .kernels import BACKEND
from .model import Hyperparams, ModelParams

__all__ = [
    "BACKEND",
    "Hyperparams",
    "KnowledgeGraph",
    "ModelParams",
    "NeighborIndex",
    "build_graph",
    "build_neighbor_index",
]
__version__ = "0.1.0"
