"""Reverse-mode differentiation over dense 2-D float64 matrices.

Only the handful of operations the distillation losses need are provided.
Every value is a 2-D ``numpy.ndarray``; scalars are ``(1, 1)`` matrices.

A graph is built eagerly by calling the op functions on :class:`Node`
objects.  Leaves created with ``requires_grad=True`` are parameters;
``backward(root)`` returns their gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def as_matrix(data, *, copy: bool = False) -> np.ndarray:
    """Coerce ``data`` to a finite 2-D float64 array (1-D input becomes one row)."""
    arr = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("matrix contains non-finite entries")
    return arr


class Node:
    """A value in the computation graph.

    ``grad`` is materialized lazily: a node never touched by ``backward``
    reports a zero gradient of its own shape.
    """

    __slots__ = ("value", "parents", "_backward", "requires_grad", "name", "_grad")

    def __init__(
        self,
        value,
        parents: tuple[Node, ...] = (),
        backward: BackwardFn | None = None,
        *,
        requires_grad: bool = False,
        name: str | None = None,
    ):
        self.value = as_matrix(value)
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name
        self._grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def detach(self) -> Node:
        """Same value, cut from the graph."""
        return Node(self.value)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Node{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def param(value, name: str | None = None) -> Node:
    return Node(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def const(value) -> Node:
    if isinstance(value, Node):
        return value.detach()
    return Node(value)


def _node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _make(value: np.ndarray, parents: tuple[Node, ...], backward: BackwardFn) -> Node:
    if any(p.requires_grad for p in parents):
        return Node(value, parents, backward)
    return Node(value)


# ---------------------------------------------------------------------------
# operations


def matmul(a, b) -> Node:
    a, b = _node(a), _node(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), backward)


def _same_shape(op: str, a: Node, b: Node) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def add(a, b) -> Node:
    a, b = _node(a), _node(b)
    _same_shape("add", a, b)
    return _make(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Node:
    a, b = _node(a), _node(b)
    _same_shape("sub", a, b)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g))


def add_row(x, bias) -> Node:
    """Add a ``(1, cols)`` bias row to every row of ``x``."""
    x, bias = _node(x), _node(bias)
    if bias.shape != (1, x.shape[1]):
        raise DimensionError(f"bias shape {bias.shape} does not broadcast over {x.shape}")
    return _make(x.value + bias.value, (x, bias), lambda g: (g, g.sum(axis=0, keepdims=True)))


def mul(a, b) -> Node:
    a, b = _node(a), _node(b)
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x, c: float) -> Node:
    x = _node(x)
    c = float(c)
    return _make(x.value * c, (x,), lambda g: (g * c,))


def tanh(x) -> Node:
    x = _node(x)
    out = np.tanh(x.value)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Node:
    x = _node(x)
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def softmax_temperature(logits, tau: float) -> Node:
    """Row-wise softmax of ``logits / tau``."""
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    logits = _node(logits)
    z = logits.value / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner) / tau,)

    return _make(p, (logits,), backward)


def row_mean(x) -> Node:
    """Mean across columns: ``(rows, cols) -> (rows, 1)``."""
    x = _node(x)
    n = x.shape[1]
    return _make(x.value.mean(axis=1, keepdims=True), (x,), lambda g: (np.repeat(g / n, n, axis=1),))


def col_mean(x) -> Node:
    """Mean down each column: ``(rows, cols) -> (1, cols)``."""
    x = _node(x)
    n = x.shape[0]
    return _make(x.value.mean(axis=0, keepdims=True), (x,), lambda g: (np.repeat(g / n, n, axis=0),))


def row_norms(x) -> Node:
    """L2 norm of each row, ``(rows, 1)``.  Zero rows get a zero subgradient."""
    x = _node(x)
    norms = np.sqrt((x.value * x.value).sum(axis=1, keepdims=True))

    def backward(g):
        safe = np.where(norms > 0, norms, 1.0)
        return (np.where(norms > 0, g * x.value / safe, 0.0),)

    return _make(norms, (x,), backward)


def normalize_rows(x) -> Node:
    """Scale each row to unit L2 norm."""
    x = _node(x)
    norms = np.sqrt((x.value * x.value).sum(axis=1, keepdims=True))
    if np.any(norms == 0):
        raise NumericError("cannot normalize a zero row")
    u = x.value / norms

    def backward(g):
        return ((g - u * (g * u).sum(axis=1, keepdims=True)) / norms,)

    return _make(u, (x,), backward)


def squared_error(a, b) -> Node:
    """Elementwise ``(a - b)**2``."""
    a, b = _node(a), _node(b)
    _same_shape("squared_error", a, b)
    d = a.value - b.value
    return _make(d * d, (a, b), lambda g: (2.0 * g * d, -2.0 * g * d))


_PROB_FLOOR = 1e-300


def cross_entropy(probs, labels) -> Node:
    """Per-row ``-log p[label]`` from probabilities, shape ``(rows, 1)``."""
    probs = _node(probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = probs.shape
    if labels.shape[0] != n:
        raise DimensionError(f"{labels.shape[0]} labels for {n} rows")
    idx = np.arange(n)
    picked = np.maximum(probs.value[idx, labels], _PROB_FLOOR)

    def backward(g):
        out = np.zeros_like(probs.value)
        out[idx, labels] = -g[:, 0] / picked
        return (out,)

    return _make(-np.log(picked).reshape(n, 1), (probs,), backward)


def total(x) -> Node:
    """Sum of all entries as a ``(1, 1)`` node."""
    x = _node(x)
    r, c = x.shape
    return scale(row_mean(col_mean(x)), r * c)


def mean(x) -> Node:
    return row_mean(col_mean(x))


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> dict[Node, np.ndarray]:
    """Propagate d(root)/d(leaf) to every trainable leaf reachable from ``root``.

    Returns a mapping leaf -> gradient and also stores each on ``leaf.grad``.
    """
    if root.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) root, got {root.shape}")
    if not root.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(root): np.ones((1, 1))}
    leaves: dict[Node, np.ndarray] = {}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node._grad = g
            leaves[node] = g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    return leaves


# ---------------------------------------------------------------------------
# finite-difference gradient check


@dataclass
class GradReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    step: float = 1e-5
    tolerance: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def grad_check(
    loss_fn: Callable[[Mapping[str, Node]], Node],
    params: Mapping[str, np.ndarray] | np.ndarray,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradReport:
    """Compare analytic gradients with central finite differences.

    ``loss_fn`` receives a mapping name -> Node and returns a scalar Node.
    A bare array is treated as a single parameter named ``"theta"``.
    Relative error per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not step > 0:
        raise ParameterError(f"step must be positive, got {step}")
    if isinstance(params, np.ndarray):
        params = {"theta": params}
    base = {k: as_matrix(v, copy=True) for k, v in params.items()}
    report = GradReport(step=step, tolerance=tolerance)
    if not base:
        return report

    leaves = {k: param(v, name=k) for k, v in base.items()}
    backward(loss_fn(leaves))
    analytic = {k: leaves[k].grad for k in base}

    def evaluate(values: dict[str, np.ndarray]) -> float:
        out = loss_fn({k: const(v) for k, v in values.items()}).item()
        if not np.isfinite(out):
            raise NumericError("loss is non-finite at a perturbed point")
        return out

    for name, arr in base.items():
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            f_plus = evaluate(base)
            arr[idx] = orig - step
            f_minus = evaluate(base)
            arr[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        report.max_rel_error[name] = float(np.max(np.abs(a - numeric) / denom))
    return report

