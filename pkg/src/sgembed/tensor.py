"""Dense float64 tensors with a reverse-mode autodiff tape.

Data is always a C-contiguous float64 ndarray. Operations record tape
nodes only when some input requires gradients, so frozen-model inference
pays no bookkeeping cost. The recorded graph is rebuilt on every forward
pass (define-by-run); ``backward`` linearizes it once into a Tape whose
nodes are in topological order (parents before children) and replays it
in reverse. Calling ``backward`` a second time without re-running the
forward pass accumulates leaf gradients a second time.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Mode(Enum):
    """Forward-pass mode; only batchnorm behaves differently between the two."""

    TRAIN = "train"
    EVAL = "eval"


class ShapeError(ValueError):
    """Inputs whose dimensions cannot be combined by the requested op."""


class IndexRangeError(ValueError):
    """An integer index argument falls outside its allowed range."""


class EmptySegmentError(ValueError):
    """segment_mean was asked to average a segment with no members."""


class DomainError(ValueError):
    """A value outside the op's mathematical domain (e.g. log of x <= 0)."""


NORM_FLOOR = 1e-8

# Rows hitting the degenerate-norm rule in rowwise_l2_normalize are counted
# here so callers can detect silently-passed-through rows.
_degenerate_norm_count = 0


def degenerate_norm_count() -> int:
    return _degenerate_norm_count


def reset_degenerate_norm_count() -> None:
    global _degenerate_norm_count
    _degenerate_norm_count = 0


def _as_array(data) -> np.ndarray:
    return np.ascontiguousarray(data, dtype=np.float64)


class Tensor:
    """A shaped float64 value, optionally participating in gradient recording.

    ``grad`` is populated only for leaf tensors (no producing op) with
    ``requires_grad=True``; intermediate results carry gradients internally
    during backward but never expose them.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class TapeNode:
    """One recorded primitive op: its inputs, output, and backward rule."""

    __slots__ = ("parents", "out", "backward_fn", "name")

    def __init__(self, parents, out, backward_fn, name):
        self.parents = tuple(parents)
        self.out = out
        self.backward_fn = backward_fn
        self.name = name


class Tape:
    """The recorded subgraph below one output, linearized topologically.

    ``nodes`` lists every TapeNode reachable from the root, with each
    node's parents appearing before the node itself.
    """

    def __init__(self, nodes: list[TapeNode]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        if root.node is None:
            return cls([])
        order: list[TapeNode] = []
        seen: set[int] = set()
        # Iterative post-order DFS: parents are emitted before children.
        stack: list[tuple[TapeNode, bool]] = [(root.node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if parent.node is not None and id(parent.node) not in seen:
                    stack.append((parent.node, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf below loss.

    The loss must be a single-element tensor. Gradients add onto whatever
    is already in ``grad``; running backward twice doubles them.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    tape = Tape.trace(loss)
    grads: dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(tape.nodes):
        out_grad = grads.pop(id(node.out), None)
        if out_grad is None:
            continue
        parent_grads = node.backward_fn(out_grad)
        for parent, g in zip(node.parents, parent_grads):
            if g is None:
                continue
            if parent.node is not None:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
            elif parent.requires_grad:
                parent.grad = g if parent.grad is None else parent.grad + g


def _result(data, parents, backward_fn, name) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(parents, out, backward_fn, name)
    return out


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul expects (m,k)@(k,n), got {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data

    def back(g):
        return g @ b_data.T, a_data.T @ g

    return _result(a_data @ b_data, (a, b), back, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also accepts a (m,) bias as second arg for a (n,m) first arg."""
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)), "add")
    raise ShapeError(f"add expects equal shapes or (n,m)+(m,), got {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub expects equal shapes, got {a.shape} - {b.shape}")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul expects equal shapes, got {a.shape} * {b.shape}")
    a_data, b_data = a.data, b.data
    return _result(a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"div expects equal shapes, got {a.shape} / {b.shape}")
    a_data, b_data = a.data, b.data

    def back(g):
        return g / b_data, -g * a_data / (b_data * b_data)

    return _result(a_data / b_data, (a, b), back, "div")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat expects at least one tensor")
    ndim = tensors[0].data.ndim
    if axis < 0 or axis >= ndim:
        raise ShapeError(f"concat axis {axis} invalid for {ndim}-d tensors")
    other = [d for d in range(ndim) if d != axis]
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(t.shape[d] != tensors[0].shape[d] for d in other):
            raise ShapeError(
                f"concat shapes must match off-axis: {[t.shape for t in tensors]}"
            )
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def relu(a: Tensor) -> Tensor:
    # Subgradient at 0 is 0 (the kink counts as inactive).
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def logsigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)), computed without overflow for large |x|."""
    x = a.data
    out = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))
    sig_neg = np.where(x >= 0, np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))), 1.0 / (1.0 + np.exp(-np.abs(x))))
    return _result(out, (a,), lambda g: (g * sig_neg,), "logsigmoid")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive inputs")
    a_data = a.data
    return _result(np.log(a_data), (a,), lambda g: (g / a_data,), "log")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def sum(a: Tensor) -> Tensor:  # noqa: A001 - deliberate, mirrors numpy's module-level sum
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise ShapeError("mean of an empty tensor is undefined")
    size, shape = a.data.size, a.shape
    return _result(
        np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / size, shape).copy(),), "mean"
    )


def rowwise_l2_normalize(a: Tensor) -> Tensor:
    """Scale every row of a 2-d tensor to unit length.

    Rows with norm below NORM_FLOOR pass through unchanged and bump the
    module's degenerate-row counter; starving them of a 1/0 keeps early
    training free of NaNs.
    """
    global _degenerate_norm_count
    if a.data.ndim != 2:
        raise ShapeError(f"rowwise_l2_normalize expects a 2-d tensor, got shape {a.shape}")
    norms = np.sqrt((a.data * a.data).sum(axis=1))
    degenerate = norms < NORM_FLOOR
    n_deg = int(degenerate.sum())
    if n_deg:
        _degenerate_norm_count += n_deg
    safe = np.where(degenerate, 1.0, norms)
    out = a.data / safe[:, None]

    def back(g):
        dots = (out * g).sum(axis=1, keepdims=True)
        gx = (g - out * dots) / safe[:, None]
        if n_deg:
            gx = gx.copy()
            gx[degenerate] = g[degenerate]
        return (gx,)

    return _result(out, (a,), back, "rowwise_l2_normalize")


def segment_mean(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Per-segment mean of rows; every segment must receive at least one row."""
    ids = np.asarray(segment_ids, dtype=np.int64)
    if values.data.ndim != 2 or ids.ndim != 1 or ids.shape[0] != values.shape[0]:
        raise ShapeError(
            f"segment_mean expects (v,f) values and (v,) ids, got {values.shape} and {ids.shape}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise IndexRangeError(f"segment ids must lie in [0, {num_segments})")
    counts = np.bincount(ids, minlength=num_segments).astype(np.float64)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptySegmentError(f"segments with no members: {empty.tolist()}")
    totals = np.zeros((num_segments, values.shape[1]))
    np.add.at(totals, ids, values.data)
    out = totals / counts[:, None]

    def back(g):
        return (g[ids] / counts[ids][:, None],)

    return _result(out, (values,), back, "segment_mean")


def gather_rows(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"gather_rows expects a 2-d table and 1-d indices, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexRangeError(f"row indices must lie in [0, {table.shape[0]})")
    n_rows = table.shape[0]

    def back(g):
        gt = np.zeros((n_rows, g.shape[1]))
        np.add.at(gt, idx, g)
        return (gt,)

    return _result(table.data[idx], (table,), back, "gather_rows")


@dataclass
class BatchNormState:
    """Running statistics and hyperparameters for one batchnorm instance."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, num_features: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(np.zeros(num_features), np.ones(num_features), momentum, eps)

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.running_mean.copy(), self.running_var.copy(), self.momentum, self.eps)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: Mode) -> Tensor:
    """Per-feature batch normalization over the row axis.

    TRAIN normalizes with the batch's (biased) statistics and updates the
    running buffers in place; EVAL is a fixed affine map using the running
    buffers, so repeated EVAL calls on the same input are bit-identical.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"batchnorm expects a 2-d input, got shape {x.shape}")
    f = x.shape[1]
    if gamma.shape != (f,) or beta.shape != (f,) or state.running_mean.shape != (f,):
        raise ShapeError(f"batchnorm parameter width must be {f}")
    if mode is Mode.TRAIN:
        if x.shape[0] == 0:
            raise ShapeError("batchnorm in TRAIN mode requires at least one row")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu) * inv_std
        m = state.momentum
        state.running_mean[:] = (1.0 - m) * state.running_mean + m * mu
        state.running_var[:] = (1.0 - m) * state.running_var + m * var
        gamma_data = gamma.data

        def back(g):
            dgamma = (g * xhat).sum(axis=0)
            dbeta = g.sum(axis=0)
            dx = gamma_data * inv_std * (g - g.mean(axis=0) - xhat * (g * xhat).mean(axis=0))
            return dx, dgamma, dbeta

    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv_std
        gamma_data = gamma.data

        def back(g):
            return g * (gamma_data * inv_std), (g * xhat).sum(axis=0), g.sum(axis=0)

    return _result(gamma.data * xhat + beta.data, (x, gamma, beta), back, "batchnorm")


def scalar(value: float) -> Tensor:
    """A constant 0-d tensor (no gradient)."""
    return Tensor(np.asarray(float(value)))
