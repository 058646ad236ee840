"""Reverse-mode automatic differentiation over a small, closed set of ops.

A :class:`Graph` is built once from named inputs, constants and op calls;
:func:`forward` evaluates it for a binding of the inputs and caches every
intermediate value, :func:`backward` then walks the tape in reverse and
returns the gradient of the scalar root with respect to every input.

Shapes are checked when the graph runs, so one graph can be re-used with
different batch sizes.  Binary element-wise ops accept equal shapes, a
scalar operand, a trailing 1-D operand (the bias case) or same-rank
operands with unit extents; nothing else is broadcast.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ShapeError",
    "GraphError",
    "Node",
    "Graph",
    "forward",
    "backward",
    "finite_diff_check",
    "AdamState",
    "adam_step",
]

OPS = (
    "matmul", "add", "multiply", "relu", "exp", "log", "cosine",
    "sum", "mean", "abs", "square", "concat", "slice",
)


class GraphError(RuntimeError):
    pass


class ShapeError(GraphError, ValueError):
    """Operand shapes are incompatible for the op at ``node``."""

    def __init__(self, node, *shapes, detail=""):
        self.node = node
        self.shapes = shapes
        shp = ", ".join(str(tuple(s)) for s in shapes)
        msg = f"shape mismatch at node {node}: {shp}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Node:
    __slots__ = ("graph", "index", "op", "inputs", "attrs", "name", "value", "grad")

    def __init__(self, graph, index, op, inputs=(), attrs=None, name=None):
        self.graph = graph
        self.index = index
        self.op = op
        self.inputs = tuple(inputs)
        self.attrs = attrs or {}
        self.name = name
        self.value = None
        self.grad = None

    def __repr__(self):
        label = f"{self.op}#{self.index}"
        return f"{label}[{self.name}]" if self.name else label

    @property
    def shape(self):
        return None if self.value is None else self.value.shape


def _broadcast_ok(node, a, b):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    # trailing 1-D operand (bias rows)
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return
    # same rank with unit extents (per-row or per-column factors)
    if a.ndim == b.ndim and all(x == y or x == 1 or y == 1 for x, y in zip(a.shape, b.shape)):
        return
    raise ShapeError(node, a.shape, b.shape)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Graph:
    """A static computation graph recorded as a topologically ordered tape."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: dict[str, Node] = {}
        self.root: Node | None = None
        self._forward_done = False
        self._owned = {}

    # construction -------------------------------------------------------
    def _push(self, op, inputs=(), attrs=None, name=None):
        for x in inputs:
            if not isinstance(x, Node) or x.graph is not self:
                raise GraphError(f"operand {x!r} of {op} does not belong to this graph")
        node = Node(self, len(self.nodes), op, inputs, attrs, name)
        self.nodes.append(node)
        self._forward_done = False
        return node

    def input(self, name, shape=None):
        if name in self.inputs:
            raise GraphError(f"duplicate input name {name!r}")
        node = self._push("input", attrs={"shape": None if shape is None else tuple(shape)}, name=name)
        self.inputs[name] = node
        return node

    def constant(self, value, name=None):
        node = self._push("constant", attrs={"value": np.asarray(value, dtype=np.float64)}, name=name)
        return node

    def matmul(self, a, b):
        return self._push("matmul", (a, b))

    def add(self, a, b):
        return self._push("add", (a, b))

    def multiply(self, a, b):
        return self._push("multiply", (a, b))

    def relu(self, x):
        return self._push("relu", (x,))

    def exp(self, x):
        return self._push("exp", (x,))

    def log(self, x):
        return self._push("log", (x,))

    def cosine(self, x):
        return self._push("cosine", (x,))

    def abs(self, x):
        return self._push("abs", (x,))

    def square(self, x):
        return self._push("square", (x,))

    def sum(self, x, axis=None):
        return self._push("sum", (x,), {"axis": axis})

    def mean(self, x, axis=None):
        return self._push("mean", (x,), {"axis": axis})

    def concat(self, xs, axis=0):
        return self._push("concat", tuple(xs), {"axis": axis})

    def slice(self, x, index, shape=None):
        """Basic-indexing slice ``x[index]``, optionally reshaped to ``shape``."""
        if not isinstance(index, tuple):
            index = (index,)
        return self._push("slice", (x,), {"index": index, "shape": None if shape is None else tuple(shape)})

    # composites built from the closed op set
    def scale(self, x, c):
        return self.multiply(x, self.constant(c))

    def shift(self, x, c):
        return self.add(x, self.constant(c))

    def sub(self, a, b):
        return self.add(a, self.scale(b, -1.0))

    def linear(self, x, w, b):
        return self.add(self.matmul(x, w), b)

    def set_root(self, node):
        if node.graph is not self:
            raise GraphError("root must belong to this graph")
        self.root = node
        return node


def _eval_node(node, inputs):
    op = node.op
    if op == "input":
        try:
            v = inputs[node.name]
        except KeyError:
            raise GraphError(f"input {node.name!r} is not bound") from None
        v = np.asarray(v, dtype=np.float64)
        want = node.attrs["shape"]
        if want is not None and v.shape != want:
            raise ShapeError(node, want, v.shape, detail="bound value does not match declared shape")
        return v
    if op == "constant":
        return node.attrs["value"]
    xs = [x.value for x in node.inputs]
    if op == "matmul":
        a, b = xs
        if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
            raise ShapeError(node, a.shape, b.shape)
        return a @ b
    if op in ("add", "multiply"):
        a, b = xs
        _broadcast_ok(node, a, b)
        return a + b if op == "add" else a * b
    x = xs[0] if xs else None
    if op == "relu":
        return np.maximum(x, 0.0)
    if op == "exp":
        return np.exp(x)
    if op == "log":
        if np.any(x <= 0.0):
            raise GraphError(f"log of non-positive value at node {node}")
        return np.log(x)
    if op == "cosine":
        return np.cos(x)
    if op == "abs":
        return np.abs(x)
    if op == "square":
        return x * x
    if op == "sum":
        return np.asarray(np.sum(x, axis=node.attrs["axis"]))
    if op == "mean":
        return np.asarray(np.mean(x, axis=node.attrs["axis"]))
    if op == "concat":
        axis = node.attrs["axis"]
        ref = xs[0].shape
        for other in xs[1:]:
            if other.ndim != len(ref) or any(
                d1 != d2 for i, (d1, d2) in enumerate(zip(ref, other.shape)) if i != axis % len(ref)
            ):
                raise ShapeError(node, *[v.shape for v in xs])
        return np.concatenate(xs, axis=axis)
    if op == "slice":
        try:
            out = x[node.attrs["index"]]
        except IndexError as exc:
            raise ShapeError(node, x.shape, detail=str(exc)) from None
        shape = node.attrs["shape"]
        if shape is not None:
            if int(np.prod(shape)) != out.size:
                raise ShapeError(node, out.shape, shape, detail="reshape size differs")
            out = out.reshape(shape)
        return np.array(out)
    raise GraphError(f"unknown op {op!r}")


def forward(graph: Graph, inputs) -> np.ndarray:
    """Evaluate ``graph`` and return the root value; every node keeps its value."""
    if graph.root is None:
        raise GraphError("graph has no root")
    for node in graph.nodes:
        v = _eval_node(node, inputs)
        if node.op not in ("input", "constant") and not np.all(np.isfinite(v)):
            raise GraphError(f"non-finite value produced at node {node}")
        node.value = v
        node.grad = None
    graph._forward_done = True
    return graph.root.value


def _accumulate(node, g):
    node.grad = g if node.grad is None else node.grad + g
    node.graph._owned[node.index] = node.grad is not g


def _backprop_node(node, owned):
    g = node.grad
    op = node.op
    ins = node.inputs
    if op == "matmul":
        a, b = ins
        av, bv = a.value, b.value
        if av.ndim == 1:
            _accumulate(a, bv @ g)
            _accumulate(b, np.outer(av, g))
        else:
            _accumulate(a, g @ bv.T)
            _accumulate(b, av.T @ g)
    elif op == "add":
        a, b = ins
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(g, b.value.shape))
    elif op == "multiply":
        a, b = ins
        _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.value.shape))
    elif op == "relu":
        _accumulate(ins[0], g * (ins[0].value > 0.0))
    elif op == "exp":
        _accumulate(ins[0], g * node.value)
    elif op == "log":
        _accumulate(ins[0], g / ins[0].value)
    elif op == "cosine":
        _accumulate(ins[0], -g * np.sin(ins[0].value))
    elif op == "abs":
        _accumulate(ins[0], g * np.sign(ins[0].value))
    elif op == "square":
        _accumulate(ins[0], 2.0 * g * ins[0].value)
    elif op in ("sum", "mean"):
        x = ins[0].value
        axis = node.attrs["axis"]
        gx = g if axis is None else np.expand_dims(g, axis)
        gx = np.broadcast_to(gx, x.shape)
        if op == "mean":
            n = x.size if axis is None else x.shape[axis]
            gx = gx / n
        _accumulate(ins[0], np.array(gx))
    elif op == "concat":
        axis = node.attrs["axis"]
        sizes = np.cumsum([x.value.shape[axis] for x in ins])[:-1]
        for x, part in zip(ins, np.split(g, sizes, axis=axis)):
            _accumulate(x, part)
    elif op == "slice":
        # scatter in place so slicing a large vector stays cheap
        src = ins[0]
        index = node.attrs["index"]
        if src.grad is None or not owned.get(src.index, False):
            src.grad = np.zeros_like(src.value) if src.grad is None else np.array(src.grad, dtype=np.float64)
            owned[src.index] = True
        src.grad[index] += g.reshape(src.value[index].shape)
    else:
        raise GraphError(f"no gradient rule for {op!r}")


def backward(graph: Graph) -> dict[str, np.ndarray]:
    """Gradient of the scalar root with respect to every named input."""
    if not graph._forward_done:
        raise GraphError("backward called before forward")
    root = graph.root
    if root.value.size != 1:
        raise GraphError(f"root {root} is not scalar (shape {root.value.shape})")
    for node in graph.nodes:
        node.grad = None
    root.grad = np.ones_like(root.value)
    graph._owned = owned = {}
    for node in reversed(graph.nodes[: root.index + 1]):
        if node.grad is None or node.op in ("input", "constant"):
            continue
        _backprop_node(node, owned)
    grads = {}
    for name, node in graph.inputs.items():
        grads[name] = np.zeros_like(node.value) if node.grad is None else np.asarray(node.grad).reshape(node.value.shape)
    return grads


def finite_diff_check(graph: Graph, inputs, h=1e-5, names=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error per entry is ``|analytic - numeric| / (|analytic| + 1e-8)``.
    ``names`` restricts the check to some inputs (default: all of them).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    forward(graph, base)
    analytic = backward(graph)
    worst = 0.0
    for name in names if names is not None else list(graph.inputs):
        x = base[name]
        flat = x.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = float(forward(graph, base))
            flat[i] = old - h
            fm = float(forward(graph, base))
            flat[i] = old
            num = (fp - fm) / (2.0 * h)
            worst = max(worst, abs(ga[i] - num) / (abs(ga[i]) + 1e-8))
    # leave the graph in the state of the unperturbed inputs
    forward(graph, base)
    return worst


@dataclass
class AdamState:
    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update; returns ``(new_params, state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise ValueError(
            f"length mismatch: params {params.shape}, grads {grads.shape}, m {state.m.shape}, v {state.v.shape}"
        )
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient at index {int(bad[0])}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    mhat = state.m / (1.0 - state.beta1 ** state.t)
    vhat = state.v / (1.0 - state.beta2 ** state.t)
    return params - state.lr * mhat / (np.sqrt(vhat) + state.eps), state
