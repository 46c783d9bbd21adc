"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and, while gradients are enabled, remembers
the operation that produced it. backward() walks the graph once in
reverse topological order and accumulates gradients into the leaves.
Every operation output (and every accumulated gradient) is checked for
NaN/Inf; non-finite values raise instead of propagating silently.

All arrays are C-contiguous float64. Results are deterministic: the only
reductions are numpy's, whose accumulation order is fixed for a given
shape.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ContractError, NonFiniteError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation.

    `parents` and `backward_fn` are set only on tensors produced by an
    operation while gradients are enabled; leaves have neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        _check_finite(self.data, "tensor data")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray, owned: bool = False) -> None:
        """Add `grad` into the accumulator.

        `owned` marks a freshly allocated buffer this tensor may keep by
        reference; unowned buffers (views of, or aliases to, a child's
        gradient) are copied because later accumulation is in place.
        """
        _check_finite(grad, "gradient")
        if self.grad is None:
            self.grad = grad if owned else grad.copy()
        else:
            self.grad += grad

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Create an op output, registering it in the graph when needed."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Populate gradients of everything `loss` depends on.

    `loss` must be a scalar (one element). The graph is traversed
    iteratively, so depth is not limited by the Python recursion limit,
    and each node's backward rule runs exactly once.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    loss._accumulate(np.ones_like(loss.data), owned=True)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
            # Interior activations are single-use; free them eagerly.
            node._parents = ()
            node._backward = None


# -- primitive operations ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            a._accumulate(ga, owned=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            b._accumulate(gb, owned=gb is not g)

    return _make(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape), owned=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape), owned=True)

    return _make(out_data, (a, b), bwd)


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    out_data = a.data * c

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * c, owned=True)

    return _make(out_data, (a,), bwd)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's leading-dimension broadcasting."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    out_data = a.data @ b.data

    def bwd(g):
        if b.data.ndim == 2 and a.data.ndim > 2:
            # x @ W with a stacked x: collapse to single GEMMs instead of
            # strided batched products.
            k, n = b.data.shape
            if a.requires_grad:
                ga = (g.reshape(-1, n) @ b.data.T).reshape(a.data.shape)
                a._accumulate(ga, owned=True)
            if b.requires_grad:
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
                b._accumulate(gb, owned=True)
            return
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape), owned=True)
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape), owned=True)

    return _make(out_data, (a, b), bwd)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(out_data, (a,), bwd)


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = _wrap(a)
    out_data = np.ascontiguousarray(a.data.swapaxes(axis1, axis2))

    def bwd(g):
        if a.requires_grad:
            gt = np.ascontiguousarray(g.swapaxes(axis1, axis2))
            a._accumulate(gt, owned=gt.base is None)

    return _make(out_data, (a,), bwd)


def first_position(a) -> Tensor:
    """Select position 0 along axis 1: [B, n, d] -> [B, d]."""
    a = _wrap(a)
    if a.data.ndim != 3:
        raise ShapeError(f"first_position expects [B, n, d], got {a.data.shape}")
    out_data = np.ascontiguousarray(a.data[:, 0, :])

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, 0, :] = g
            a._accumulate(full, owned=True)

    return _make(out_data, (a,), bwd)


def sum_all(a) -> Tensor:
    a = _wrap(a)
    out_data = np.asarray(a.data.sum())

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g)), owned=True)

    return _make(out_data, (a,), bwd)


def mean_all(a) -> Tensor:
    a = _wrap(a)
    n = a.data.size
    out_data = np.asarray(a.data.mean())

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g) / n), owned=True)

    return _make(out_data, (a,), bwd)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max subtraction)."""
    a = _wrap(a)
    if a.data.shape[axis] < 1:
        raise ShapeError("softmax needs a non-empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * p).sum(axis=axis, keepdims=True)
            a._accumulate(p * (g - dot), owned=True)

    return _make(p, (a,), bwd)


_MASK_NEG = -1e30  # exp() underflows to exactly 0.0 in float64


def masked_softmax(scores, key_mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over `axis` where key positions with mask 0 get zero weight.

    `key_mask` is [B, n] over the last axis of `scores`; leading axes of
    `scores` broadcast against it. Masked positions receive a -1e30 score
    internally, which underflows to an exact zero probability, so padded
    keys can never influence the result and never receive gradient.
    """
    scores = _wrap(scores)
    mask = np.asarray(key_mask, dtype=bool)
    expand = (mask.shape[0],) + (1,) * (scores.data.ndim - 2) + (mask.shape[-1],)
    mask_b = mask.reshape(expand)
    filled = np.where(mask_b, scores.data, _MASK_NEG)
    shifted = filled - filled.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if scores.requires_grad:
            dot = (g * p).sum(axis=axis, keepdims=True)
            scores._accumulate(p * (g - dot), owned=True)

    return _make(p, (scores,), bwd)


def layernorm(x, gain, bias, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def bwd(g):
        if bias.requires_grad:
            gb = _unbroadcast(g, bias.data.shape)
            bias._accumulate(gb, owned=gb is not g)
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.data.shape), owned=True)
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (dxhat - m1 - xhat * m2), owned=True)

    return _make(out_data, (x, gain, bias), bwd)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x) -> Tensor:
    """tanh-approximation GELU: 0.5*x*(1+tanh(sqrt(2/pi)*(x+0.044715*x^3)))."""
    x = _wrap(x)
    xd = x.data
    u = _GELU_C * (xd + 0.044715 * (xd * xd * xd))
    t = np.tanh(u)
    out_data = 0.5 * xd * (1.0 + t)

    def bwd(g):
        if x.requires_grad:
            sech2 = 1.0 - t * t
            du = _GELU_C * (1.0 + 3 * 0.044715 * (xd * xd))
            x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * xd * sech2 * du),
                          owned=True)

    return _make(out_data, (x,), bwd)


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row gather from `table` [V, d]; backward scatter-adds into rows."""
    table = _wrap(table)
    ids = np.asarray(ids)
    vocab = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"embedding ids outside [0, {vocab})")
    out_data = np.ascontiguousarray(table.data[ids])

    def bwd(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
            table._accumulate(gt, owned=True)

    return _make(out_data, (table,), bwd)


def dropout(x, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; caller only invokes this in training mode."""
    x = _wrap(x)
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out_data = x.data * keep

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * keep, owned=True)

    return _make(out_data, (x,), bwd)


def cross_entropy_with_logits(logits, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood, computed in log space from logits."""
    logits = _wrap(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"cross entropy expects logits [B, N] and labels [B], got "
            f"{logits.data.shape} and {labels.shape}"
        )
    n_classes = logits.data.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(f"labels outside [0, {n_classes})")
    m = logits.data.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits.data - m).sum(axis=1))
    batch = np.arange(labels.shape[0])
    out_data = np.asarray((lse - logits.data[batch, labels]).mean())

    def bwd(g):
        if logits.requires_grad:
            p = np.exp(logits.data - m)
            p /= p.sum(axis=1, keepdims=True)
            p[batch, labels] -= 1.0
            logits._accumulate(p * (float(g) / labels.shape[0]), owned=True)

    return _make(out_data, (logits,), bwd)


_KL_EPS = 1e-12


def kl_to_const(p, q: np.ndarray) -> Tensor:
    """Batch-mean KL(p || q) with q a constant; eps-floored inside the logs."""
    p = _wrap(p)
    q = np.asarray(q, dtype=np.float64)
    if p.data.shape != q.shape or p.data.ndim != 2:
        raise ShapeError(f"KL expects matching [B, N] rows, got {p.data.shape} and {q.shape}")
    pf = np.maximum(p.data, _KL_EPS)
    qf = np.maximum(q, _KL_EPS)
    log_ratio = np.log(pf) - np.log(qf)
    out_data = np.asarray((p.data * log_ratio).sum(axis=1).mean())

    def bwd(g):
        if p.requires_grad:
            # d/dp of p*log(max(p,eps)/max(q,eps)); the +1 term exists
            # only where p is above the floor.
            local = log_ratio + (p.data >= _KL_EPS)
            p._accumulate(local * (float(g) / p.data.shape[0]), owned=True)

    return _make(out_data, (p,), bwd)
