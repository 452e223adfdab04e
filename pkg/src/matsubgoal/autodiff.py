"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to one gradient per parent. The graph is
implicit in those parent links; :func:`backward` orders it topologically and
walks it once.

No implicit broadcasting: binary ops demand equal shapes, and the only
row-broadcast is the explicit :func:`add_bias`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "add_bias",
    "matmul",
    "relu",
    "layer_norm",
    "softmax",
    "log_softmax",
    "embedding_lookup",
    "select",
    "concat",
    "reshape",
    "max_pool_over_axis",
    "scaled_dot_product_attention",
    "sum",
    "mean",
    "cross_entropy",
    "kl_divergence",
]

_Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    """Raised when an op receives shape-incompatible inputs."""


def _as_array(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if any(d <= 0 for d in arr.shape):
        raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("tensor data contains NaN or Inf")
    return arr


class Tensor:
    """A dense float64 value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: _Backward | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple[Tensor, ...], backward: _Backward, op: str) -> Tensor:
        if not np.isfinite(data).all():
            raise FloatingPointError(f"{op}: produced a non-finite value")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item(): tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


class Parameter(Tensor):
    """A named, trainable leaf tensor owned by a model."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Sets ``.grad`` on every tracked node reachable from ``loss`` and returns
    the same gradients as a mapping keyed by tensor. Leaves that were not
    reached keep whatever ``.grad`` they had.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        result[node] = g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    return result


# --- elementwise ---------------------------------------------------------


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.data, b.data
    return Tensor._from_op(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def neg(x: Tensor) -> Tensor:
    return Tensor._from_op(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._from_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` (rank 1) added to every row of ``x``."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: cannot add bias {b.shape} to {x.shape}")
    lead = tuple(range(x.data.ndim - 1))
    return Tensor._from_op(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)), "add_bias")


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return Tensor._from_op(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,), "relu")


# --- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; ``a`` may be rank 1 (row vector) or rank 2, ``b`` rank 2."""
    if a.data.ndim not in (1, 2) or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.data, b.data

    def _bw(g):
        ga = g @ bv.T
        gb = np.outer(av, g) if av.ndim == 1 else av.T @ g
        return ga, gb

    return Tensor._from_op(av @ bv, (a, b), _bw, "matmul")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv_std
    lead = tuple(range(x.data.ndim - 1))

    def _bw(g):
        gx_hat = g * gain.data
        gx = inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op(xhat * gain.data + bias.data, (x, gain, bias), _bw, "layer_norm")


# --- normalisation -----------------------------------------------------------


def _log_softmax(z: np.ndarray, axis: int) -> np.ndarray:
    zmax = z.max(axis=axis, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = np.exp(_log_softmax(x.data, axis))

    def _bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(y, (x,), _bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = _log_softmax(x.data, axis)
    p = np.exp(out)

    def _bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), _bw, "log_softmax")


# --- indexing / structure ------------------------------------------------------


def embedding_lookup(table: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows of a rank-2 ``table``; result has shape (len(indices), d)."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be rank 2, got {table.shape}")
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ShapeError("embedding_lookup: empty index list")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise IndexError(f"embedding_lookup: index out of range for table of {table.shape[0]} rows")
    rows = table.shape[0]

    def _bw(g):
        gt = np.zeros((rows, g.shape[1]))
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor._from_op(table.data[idx], (table,), _bw, "embedding_lookup")


def select(x: Tensor, index: int) -> Tensor:
    """``x[index]`` along the leading axis."""
    n = x.shape[0] if x.data.ndim else 0
    if not -n <= index < n:
        raise IndexError(f"select: index {index} out of range for leading dim {n}")
    shape = x.shape

    def _bw(g):
        gx = np.zeros(shape)
        gx[index] = g
        return (gx,)

    return Tensor._from_op(x.data[index].copy(), (x,), _bw, "select")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat: no inputs")
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        other = [d for i, d in enumerate(t.shape) if i != ax]
        first = [d for i, d in enumerate(tensors[0].shape) if i != ax]
        if t.data.ndim != ndim or other != first:
            raise ShapeError(f"concat: shape mismatch {tensors[0].shape} vs {t.shape} along axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def _bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, _bw, "concat")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {src} to {shape}") from exc
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(src),), "reshape")


def max_pool_over_axis(x: Tensor, axis: int = 0) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    arg = np.expand_dims(x.data.argmax(axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis).squeeze(axis)
    shape = x.shape

    def _bw(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, arg, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return Tensor._from_op(out, (x,), _bw, "max_pool")


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False, n_heads: int = 1) -> Tensor:
    """Multi-head softmax(q kᵀ / √d_head) v over rank-2 inputs.

    ``q`` is (n, d), ``k`` and ``v`` are (m, d); heads split ``d`` evenly.
    With ``causal`` set, position i attends only to positions j <= i.
    """
    if q.data.ndim != 2 or k.shape != v.shape or k.data.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ShapeError(f"attention: shape mismatch q{q.shape} k{k.shape} v{v.shape}")
    n, d = q.shape
    m = k.shape[0]
    if d % n_heads:
        raise ShapeError(f"attention: width {d} not divisible by {n_heads} heads")
    if causal and n != m:
        raise ShapeError(f"attention: causal masking needs square scores, got {n}x{m}")
    dh = d // n_heads
    inv = 1.0 / np.sqrt(dh)
    qh = q.data.reshape(n, n_heads, dh).transpose(1, 0, 2)
    kh = k.data.reshape(m, n_heads, dh).transpose(1, 0, 2)
    vh = v.data.reshape(m, n_heads, dh).transpose(1, 0, 2)
    scores = (qh @ kh.transpose(0, 2, 1)) * inv
    if causal:
        scores = np.where(np.triu(np.ones((n, m), dtype=bool), 1), -np.inf, scores)
    scores = scores - scores.max(axis=-1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=-1, keepdims=True)
    out = (attn @ vh).transpose(1, 0, 2).reshape(n, d)

    def _bw(g):
        gh = g.reshape(n, n_heads, dh).transpose(1, 0, 2)
        gv = attn.transpose(0, 2, 1) @ gh
        ga = gh @ vh.transpose(0, 2, 1)
        gs = attn * (ga - (ga * attn).sum(axis=-1, keepdims=True)) * inv
        gq = gs @ kh
        gk = gs.transpose(0, 2, 1) @ qh
        merge = lambda t, rows: t.transpose(1, 0, 2).reshape(rows, d)  # noqa: E731
        return merge(gq, n), merge(gk, m), merge(gv, m)

    return Tensor._from_op(out, (q, k, v), _bw, "attention")


# --- reductions ------------------------------------------------------------------


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return Tensor._from_op(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")
    out = x.data.sum(axis=axis)
    return Tensor._from_op(
        out, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),), "sum"
    )


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis), 1.0 / count)


# --- losses -----------------------------------------------------------------------


def cross_entropy(logits: Tensor, target: int | Sequence[int]) -> Tensor:
    """``-log softmax(logits)[target]``; rank-2 logits average over rows."""
    z = logits.data
    if z.ndim == 1:
        targets = np.array([target], dtype=np.int64)
        z2 = z[None, :]
    elif z.ndim == 2:
        targets = np.asarray(target, dtype=np.int64).reshape(-1)
        if targets.size != z.shape[0]:
            raise ShapeError(f"cross_entropy: {z.shape[0]} rows but {targets.size} targets")
        z2 = z
    else:
        raise ShapeError(f"cross_entropy: logits must be rank 1 or 2, got {logits.shape}")
    n_cls = z2.shape[1]
    if targets.min() < 0 or targets.max() >= n_cls:
        raise IndexError(f"cross_entropy: target out of range for {n_cls} classes")
    logp = _log_softmax(z2, axis=1)
    rows = np.arange(z2.shape[0])
    value = -logp[rows, targets].mean()

    def _bw(g):
        gz = np.exp(logp)
        gz[rows, targets] -= 1.0
        gz *= float(g) / z2.shape[0]
        return (gz.reshape(z.shape),)

    return Tensor._from_op(np.asarray(value), (logits,), _bw, "cross_entropy")


def kl_divergence(p_logits: Tensor, q_logits: Tensor) -> Tensor:
    """KL(softmax(p) || softmax(q)), summed over leading rows if rank 2."""
    _same_shape("kl_divergence", p_logits, q_logits)
    logp = _log_softmax(p_logits.data, axis=-1)
    logq = _log_softmax(q_logits.data, axis=-1)
    p = np.exp(logp)
    q = np.exp(logq)
    ratio = logp - logq
    row_kl = (p * ratio).sum(axis=-1, keepdims=True)
    # clamp tiny negative round-off; KL is nonnegative
    value = max(float(row_kl.sum()), 0.0)

    def _bw(g):
        g = float(g)
        return g * p * (ratio - row_kl), g * (q - p)

    return Tensor._from_op(np.asarray(value), (p_logits, q_logits), _bw, "kl_divergence")
