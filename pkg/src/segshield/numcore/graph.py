"""
Static computation graphs over dense float32 tensors with reverse-mode
differentiation.

A graph is a list of primitive nodes in topological order. Tensors are plain
``numpy.ndarray`` objects of dtype float32 laid out row-major; spatial tensors
are channels-last ``(N, H, W, C)``. Every primitive computes in float64 and
rounds its result to float32, so reductions (convolutions and ``sum``)
accumulate in 64-bit.

Supported primitives:

==================  =========================================================
``conv2d_same``     ``(N,H,W,Cin) * (kh,kw,Cin,Cout) -> (N,H,W,Cout)``, zero pad
``add_bias``        ``(..., C) + (C,)``
``relu``            elementwise
``sigmoid``         elementwise
``subtract``        elementwise, equal dims
``square``          elementwise
``sum``             any dims -> ``(1,)``
==================  =========================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

OPS = ("conv2d_same", "add_bias", "relu", "sigmoid", "subtract", "square", "sum")
_ARITY = {"conv2d_same": 2, "add_bias": 2, "subtract": 2}


class NumcoreError(ValueError):
    """Base class for graph construction and evaluation errors."""


class ShapeMismatchError(NumcoreError):
    def __init__(self, node, expected, got):
        self.node = node
        self.expected = tuple(expected) if expected is not None else None
        self.got = tuple(got)
        super().__init__(f"shape mismatch at {node!r}: expected {self.expected}, got {self.got}")


class UnboundInputError(NumcoreError):
    pass


class UnknownNameError(NumcoreError):
    pass


class NonScalarLossError(NumcoreError):
    pass


class NonFiniteError(NumcoreError):
    pass


@dataclass(frozen=True)
class Node:
    name: str
    op: str
    inputs: tuple[str, ...]
    dims: tuple[int, ...]


@dataclass(frozen=True)
class Graph:
    """Immutable graph: declared inputs plus nodes in evaluation order.

    Construction re-derives every node's dims, so a graph that exists is
    acyclic, topologically ordered and shape-consistent.
    """

    inputs: Mapping[str, tuple[int, ...]]
    nodes: tuple[Node, ...]
    _dims: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dims = {}
        for name, d in self.inputs.items():
            d = tuple(int(v) for v in d)
            if not d or any(v < 1 for v in d):
                raise NumcoreError(f"dims of {name!r} must be positive, got {d}")
            dims[name] = d
        for node in self.nodes:
            if node.op not in OPS:
                raise NumcoreError(f"unsupported op {node.op!r}")
            if node.name in dims:
                raise NumcoreError(f"duplicate tensor name {node.name!r}")
            if len(node.inputs) != _ARITY.get(node.op, 1):
                raise NumcoreError(f"{node.op} takes {_ARITY.get(node.op, 1)} inputs")
            for i in node.inputs:
                if i not in dims:
                    raise UnknownNameError(
                        f"node {node.name!r} references {i!r} before it is defined"
                    )
            got = _infer_dims(node.op, node.name, [dims[i] for i in node.inputs])
            if tuple(node.dims) != got:
                raise ShapeMismatchError(node.name, got, node.dims)
            dims[node.name] = got
        object.__setattr__(self, "_dims", dims)

    def dims(self, name: str) -> tuple[int, ...]:
        try:
            return self._dims[name]
        except KeyError:
            raise UnknownNameError(f"unknown tensor {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._dims


def _infer_dims(op, name, in_dims):
    if op == "conv2d_same":
        x, w = in_dims
        if len(x) != 4 or len(w) != 4:
            raise ShapeMismatchError(name, None, x + w)
        kh, kw, cin, _ = w
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeMismatchError(name, ("odd", "odd", cin, w[3]), w)
        if x[3] != cin:
            raise ShapeMismatchError(name, x[:3] + (cin,), x)
        return x[:3] + (w[3],)
    if op == "add_bias":
        x, b = in_dims
        if len(b) != 1 or not x or x[-1] != b[0]:
            raise ShapeMismatchError(name, (x[-1] if x else None,), b)
        return x
    if op == "subtract":
        a, b = in_dims
        if a != b:
            raise ShapeMismatchError(name, a, b)
        return a
    if op == "sum":
        return (1,)
    return in_dims[0]


class GraphBuilder:
    """Incrementally assembles a :class:`Graph`, checking shape rules per node."""

    def __init__(self):
        self._inputs: dict[str, tuple[int, ...]] = {}
        self._nodes: list[Node] = []
        self._dims: dict[str, tuple[int, ...]] = {}

    def input(self, name, dims):
        dims = tuple(int(d) for d in dims)
        if name in self._dims:
            raise NumcoreError(f"duplicate tensor name {name!r}")
        if not dims or any(d < 1 for d in dims):
            raise NumcoreError(f"dims must be positive, got {dims}")
        self._inputs[name] = dims
        self._dims[name] = dims
        return name

    def add(self, op, *inputs, name=None):
        if op not in OPS:
            raise NumcoreError(f"unsupported op {op!r}")
        if len(inputs) != _ARITY.get(op, 1):
            raise NumcoreError(f"{op} takes {_ARITY.get(op, 1)} inputs, got {len(inputs)}")
        name = name or f"{op}_{len(self._nodes)}"
        if name in self._dims:
            raise NumcoreError(f"duplicate tensor name {name!r}")
        for i in inputs:
            if i not in self._dims:
                raise UnknownNameError(f"node {name!r} references unknown tensor {i!r}")
        dims = _infer_dims(op, name, [self._dims[i] for i in inputs])
        self._nodes.append(Node(name, op, tuple(inputs), dims))
        self._dims[name] = dims
        return name

    def conv2d_same(self, x, w, name=None):
        return self.add("conv2d_same", x, w, name=name)

    def add_bias(self, x, b, name=None):
        return self.add("add_bias", x, b, name=name)

    def relu(self, x, name=None):
        return self.add("relu", x, name=name)

    def sigmoid(self, x, name=None):
        return self.add("sigmoid", x, name=name)

    def subtract(self, a, b, name=None):
        return self.add("subtract", a, b, name=name)

    def square(self, x, name=None):
        return self.add("square", x, name=name)

    def sum(self, x, name=None):
        return self.add("sum", x, name=name)

    def build(self) -> Graph:
        return Graph(dict(self._inputs), tuple(self._nodes))


# -- primitive kernels (float64 in, float64 out) ---------------------------------


def _im2col(x, kh, kw):
    ph, pw = kh // 2, kw // 2
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # n,h,w,c,kh,kw
    return cols.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * c)


def _conv(x, w):
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    out = _im2col(x, kh, kw) @ w.reshape(kh * kw * cin, cout)
    return out.reshape(n, h, wd, cout)


def _conv_grad_input(g, w):
    # full correlation with the spatially flipped, in/out-swapped kernel
    return _conv(g, w[::-1, ::-1].transpose(0, 1, 3, 2))


def _conv_grad_weight(x, g, kshape):
    kh, kw, cin, cout = kshape
    cols = _im2col(x, kh, kw)
    return (cols.T @ g.reshape(-1, cout)).reshape(kshape)


def _forward_op(op, args):
    if op == "conv2d_same":
        return _conv(*args)
    if op == "add_bias":
        return args[0] + args[1]
    if op == "relu":
        return np.maximum(args[0], 0.0)
    if op == "sigmoid":
        return expit(args[0])
    if op == "subtract":
        return args[0] - args[1]
    if op == "square":
        return args[0] * args[0]
    if op == "sum":
        return np.array([args[0].sum()])
    raise NumcoreError(f"unsupported op {op!r}")


def _backward_op(op, args, out, g, need):
    """Return input gradients (float64 or None) for one node given its output grad."""
    if op == "conv2d_same":
        x, w = args
        return (
            _conv_grad_input(g, w) if need[0] else None,
            _conv_grad_weight(x, g, w.shape) if need[1] else None,
        )
    if op == "add_bias":
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)
    if op == "relu":
        return (np.where(args[0] > 0, g, 0.0),)
    if op == "sigmoid":
        return (g * out * (1.0 - out),)
    if op == "subtract":
        return g, -g
    if op == "square":
        return (2.0 * args[0] * g,)
    if op == "sum":
        return (np.full(args[0].shape, g[0]),)
    raise NumcoreError(f"unsupported op {op!r}")


# -- evaluation -------------------------------------------------------------------


def forward(graph: Graph, inputs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Evaluate every node. Returns a dict holding inputs and all intermediates."""
    values: dict[str, np.ndarray] = {}
    for name in graph.inputs:
        dims = graph.dims(name)
        if name not in inputs:
            raise UnboundInputError(f"graph input {name!r} is not bound")
        arr = np.asarray(inputs[name], dtype=np.float32)
        if arr.shape != dims:
            raise ShapeMismatchError(name, dims, arr.shape)
        values[name] = arr
    for node in graph.nodes:
        out = _forward_op(node.op, [values[i].astype(np.float64) for i in node.inputs])
        with np.errstate(over="ignore"):
            out = out.astype(np.float32)
        if not np.isfinite(out).all():
            raise NonFiniteError(f"non-finite values produced by {node.name!r}")
        values[node.name] = out
    return values


def backward(
    graph: Graph,
    values: Mapping[str, np.ndarray],
    seeds: Mapping[str, np.ndarray],
    wrt,
) -> dict[str, np.ndarray]:
    """Propagate seed gradients back to the graph inputs named in ``wrt``.

    ``values`` is the dict returned by :func:`forward`. Only nodes lying on a
    path from a ``wrt`` input to a seeded tensor are differentiated.
    """
    wrt = list(wrt)
    for name in wrt:
        if name not in graph.inputs:
            raise UnknownNameError(f"{name!r} is not a graph input")
    for name, s in seeds.items():
        if name not in graph:
            raise UnknownNameError(f"unknown seed tensor {name!r}")
        if np.shape(s) != graph.dims(name):
            raise ShapeMismatchError(name, graph.dims(name), np.shape(s))

    depends = set(wrt)
    for node in graph.nodes:
        if any(i in depends for i in node.inputs):
            depends.add(node.name)

    grads: dict[str, np.ndarray] = {n: np.asarray(s, dtype=np.float64) for n, s in seeds.items()}
    for node in reversed(graph.nodes):
        g = grads.pop(node.name, None)
        if g is None or node.name not in depends:
            continue
        need = [i in depends for i in node.inputs]
        args = [values[i].astype(np.float64) for i in node.inputs]
        out = values[node.name].astype(np.float64)
        # round each propagated gradient to float32 storage
        g = g.astype(np.float32).astype(np.float64)
        for src, gi, needed in zip(node.inputs, _backward_op(node.op, args, out, g, need), need):
            if not needed or gi is None:
                continue
            grads[src] = grads[src] + gi if src in grads else gi

    result = {}
    for name in wrt:
        gi = grads.get(name)
        gi = np.zeros(graph.dims(name), np.float32) if gi is None else gi.astype(np.float32)
        if not np.isfinite(gi).all():
            raise NonFiniteError(f"non-finite gradient for {name!r}")
        result[name] = gi
    return result


def input_gradient(graph: Graph, inputs, loss_output: str, wrt: str) -> np.ndarray:
    """Gradient of a scalar graph output with respect to one graph input."""
    if loss_output not in graph:
        raise UnknownNameError(f"unknown tensor {loss_output!r}")
    if graph.dims(loss_output) != (1,):
        raise NonScalarLossError(
            f"{loss_output!r} has dims {graph.dims(loss_output)}, expected (1,)"
        )
    values = forward(graph, inputs)
    return backward(graph, values, {loss_output: np.ones(1)}, [wrt])[wrt]
