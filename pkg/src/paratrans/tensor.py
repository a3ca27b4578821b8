"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape-based engine: every primitive returns a new Tensor holding the
forward value plus a closure that routes the output gradient back to the
operands. Calling backward() on a scalar output walks the recorded graph in
reverse topological order and accumulates gradients into the .grad slots.

The primitive set is exactly what a Transformer needs: matmul (optionally
stacked over leading axes), add/mul with trailing-suffix broadcasting, scalar
scaling, relu, softmax with an additive mask, layer normalization, embedding
gather, reshape/transpose, a sum reduction, and cross-entropy from logits.
No general broadcasting beyond that.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeMismatch",
    "no_grad",
    "matmul",
    "add",
    "mul",
    "scale",
    "relu",
    "softmax",
    "layer_norm",
    "embedding",
    "reshape",
    "transpose",
    "tsum",
    "cross_entropy",
    "backward",
]

# When False (inside no_grad()), ops skip tape recording entirely.
_grad_enabled = True

# Every completed op asserts its output is finite; cheap at desk scale and it
# turns silent divergence into an immediate diagnostic.
CHECK_FINITE = True


class ShapeMismatch(ValueError):
    """An op received arrays whose shapes do not conform.

    Carries the primitive name and the offending shapes so callers can report
    exactly which op failed.
    """

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes {' vs '.join(str(s) for s in self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "op", "_parents", "_backward")

    def __init__(self, data, op: str = "leaf", parents: Sequence["Tensor"] = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self._parents = tuple(parents) if _grad_enabled else ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, inputs: Optional[Iterable["Tensor"]] = None):
        backward(self, inputs)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(out: Tensor, backward_fn) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"{out.op}: produced non-finite values")
    if _grad_enabled:
        out._backward = backward_fn
    return out


def backward(output: Tensor, inputs: Optional[Iterable[Tensor]] = None):
    """Populate .grad for every tensor on the tape reachable from `output`.

    `output` must be scalar. Tensors passed via `inputs` that the graph never
    touched get explicit zero gradients.
    """
    if output.size != 1:
        raise ValueError(f"backward: output must be scalar, got shape {output.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    output.accumulate_grad(np.ones_like(output.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    if inputs is not None:
        for t in inputs:
            if t.grad is None:
                t.zero_grad()


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product. Supports 2D x 2D, stacked (..., m, n) @ (..., n, p) with
    equal leading axes, and stacked (..., m, n) @ 2D weight (n, p)."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul", a.shape, b.shape, detail="operands must be >= 2D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape, detail="inner dimensions differ")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape, detail="leading dimensions differ")
    out = Tensor(a.data @ b.data, op="matmul", parents=(a, b))

    def _bw(g):
        if b.ndim == 2 and a.ndim > 2:
            a.accumulate_grad(g @ b.data.T)
            b.accumulate_grad(np.tensordot(a.data, g, axes=(range(a.ndim - 1), range(a.ndim - 1))))
        else:
            a.accumulate_grad(g @ np.swapaxes(b.data, -1, -2))
            b.accumulate_grad(np.swapaxes(a.data, -1, -2) @ g)

    return _finish(out, _bw)


def _suffix_broadcast_ok(a_shape, b_shape) -> bool:
    return a_shape == b_shape or (
        len(b_shape) < len(a_shape) and a_shape[len(a_shape) - len(b_shape):] == b_shape
    )


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(range(g.ndim - len(shape)))
    return g.sum(axis=axes)


def add(a, b) -> Tensor:
    """Elementwise sum; `b` may be a trailing-suffix shape of `a` (bias add)."""
    a, b = _wrap(a), _wrap(b)
    if not _suffix_broadcast_ok(a.shape, b.shape):
        raise ShapeMismatch("add", a.shape, b.shape)
    out = Tensor(a.data + b.data, op="add", parents=(a, b))

    def _bw(g):
        a.accumulate_grad(g)
        b.accumulate_grad(_reduce_to(g, b.shape))

    return _finish(out, _bw)


def mul(a, b) -> Tensor:
    """Elementwise product; same broadcasting rule as add."""
    a, b = _wrap(a), _wrap(b)
    if not _suffix_broadcast_ok(a.shape, b.shape):
        raise ShapeMismatch("mul", a.shape, b.shape)
    out = Tensor(a.data * b.data, op="mul", parents=(a, b))

    def _bw(g):
        a.accumulate_grad(g * b.data)
        b.accumulate_grad(_reduce_to(g * a.data, b.shape))

    return _finish(out, _bw)


def scale(a, s: float) -> Tensor:
    a = _wrap(a)
    s = float(s)
    out = Tensor(a.data * s, op="scale", parents=(a,))

    def _bw(g):
        a.accumulate_grad(g * s)

    return _finish(out, _bw)


def relu(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.maximum(a.data, 0.0), op="relu", parents=(a,))

    def _bw(g):
        a.accumulate_grad(g * (a.data > 0.0))

    return _finish(out, _bw)


def softmax(a, mask: Optional[np.ndarray] = None, axis: int = -1) -> Tensor:
    """Softmax along `axis` after adding an optional additive mask.

    The mask is a constant array broadcastable to `a` (use large negative
    values, e.g. -1e9, to zero out positions); gradients do not flow into it.
    """
    a = _wrap(a)
    if not (-a.ndim <= axis < a.ndim):
        raise ShapeMismatch("softmax", a.shape, detail=f"axis {axis} out of range")
    z = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        try:
            z = z + mask
        except ValueError:
            raise ShapeMismatch("softmax", a.shape, mask.shape, detail="mask not broadcastable")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p, op="softmax", parents=(a,))

    def _bw(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        a.accumulate_grad(p * (g - dot))

    return _finish(out, _bw)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) variance.

    Affine gain/bias, when wanted, are separate mul/add ops.
    """
    a = _wrap(a)
    if a.ndim < 1:
        raise ShapeMismatch("layer_norm", a.shape, detail="needs at least 1 axis")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor(y, op="layer_norm", parents=(a,))

    def _bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        a.accumulate_grad(inv * (g - gm - y * gym))

    return _finish(out, _bw)


def embedding(table, ids) -> Tensor:
    """Gather rows of `table` ([V, d]) by an integer id array."""
    table = _wrap(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeMismatch("embedding", table.shape, detail="table must be 2D")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeMismatch("embedding", ids.shape, detail="ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding: id out of range [0, {table.shape[0]}) in gather of shape {ids.shape}"
        )
    out = Tensor(table.data[ids], op="embedding", parents=(table,))

    def _bw(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table.accumulate_grad(acc)

    return _finish(out, _bw)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeMismatch("reshape", a.shape, shape, detail="element counts differ")
    out = Tensor(a.data.reshape(shape), op="reshape", parents=(a,))

    def _bw(g):
        a.accumulate_grad(g.reshape(a.shape))

    return _finish(out, _bw)


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeMismatch("transpose", a.shape, detail=f"invalid axes {axes}")
    inv = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes), op="transpose", parents=(a,))

    def _bw(g):
        a.accumulate_grad(g.transpose(inv))

    return _finish(out, _bw)


def tsum(a) -> Tensor:
    """Sum of all elements (scalar); mostly useful for building test losses."""
    a = _wrap(a)
    out = Tensor(a.data.sum(), op="sum", parents=(a,))

    def _bw(g):
        a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    return _finish(out, _bw)


def cross_entropy(
    logits,
    targets,
    weights: Optional[np.ndarray] = None,
    label_smoothing: float = 0.0,
) -> Tensor:
    """Weighted mean cross-entropy from raw logits.

    logits: (..., V); targets: integer array of shape (...); weights: same
    shape as targets (0 excludes a position, e.g. padding). With label
    smoothing e the target distribution is (1-e)*onehot + e/V.
    """
    logits = _wrap(logits)
    targets = np.asarray(targets)
    if logits.ndim < 1:
        raise ShapeMismatch("cross_entropy", logits.shape, detail="needs a class axis")
    if targets.shape != logits.shape[:-1]:
        raise ShapeMismatch("cross_entropy", logits.shape, targets.shape)
    if not np.issubdtype(targets.dtype, np.integer):
        raise ShapeMismatch("cross_entropy", targets.shape, detail="targets must be integers")
    vocab = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise IndexError(f"cross_entropy: target id out of range [0, {vocab})")
    if weights is None:
        w = np.ones(targets.shape, dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != targets.shape:
            raise ShapeMismatch("cross_entropy", w.shape, targets.shape, detail="weights")
    total = w.sum()
    if total <= 0.0:
        raise ValueError("cross_entropy: weights sum to zero")

    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    sumez = ez.sum(axis=-1, keepdims=True)
    logz = (np.log(sumez) + zmax)[..., 0]
    picked = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    nll = logz - picked
    e = float(label_smoothing)
    if e:
        uniform_ce = logz - z.mean(axis=-1)
        per_pos = (1.0 - e) * nll + e * uniform_ce
    else:
        per_pos = nll
    loss = float((per_pos * w).sum() / total)
    out = Tensor(loss, op="cross_entropy", parents=(logits,))
    probs = ez / sumez

    def _bw(g):
        q = np.zeros_like(probs)
        np.put_along_axis(q, targets[..., None], 1.0 - e, axis=-1)
        if e:
            q += e / vocab
        grad = (probs - q) * (w / total)[..., None]
        logits.accumulate_grad(grad * g)

    return _finish(out, _bw)
