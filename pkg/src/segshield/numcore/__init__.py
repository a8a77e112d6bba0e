"""Dense float32 tensors, static graphs and reverse-mode gradients."""

from .graph import (
    OPS,
    Graph,
    GraphBuilder,
    Node,
    NonFiniteError,
    NonScalarLossError,
    NumcoreError,
    ShapeMismatchError,
    UnboundInputError,
    UnknownNameError,
    backward,
    forward,
    input_gradient,
)
from . import rtn

__all__ = [
    "OPS",
    "Graph",
    "GraphBuilder",
    "Node",
    "NonFiniteError",
    "NonScalarLossError",
    "NumcoreError",
    "ShapeMismatchError",
    "UnboundInputError",
    "UnknownNameError",
    "backward",
    "forward",
    "input_gradient",
    "rtn",
]
