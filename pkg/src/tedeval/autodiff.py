"""Reverse-mode autodiff over numpy arrays, sized for this harness.

Covers exactly the op set the aggregator/denoiser need: elementwise
arithmetic, matmul (batched), reductions, exp/log/sqrt/erf/tanh, indexing,
concat, layer norm, masked softmax and a layer-mixing primitive. Every op
checks its output for NaN/Inf and raises NumericError on violation.

Tensors are immutable from the graph's point of view; a node records its
parents and a backward closure, and ``backward()`` replays the tape in
reverse topological order. Use ``no_grad()`` to run forward-only.
"""

from contextlib import contextmanager

import numpy as np
from scipy.special import erf as _erf

from .errors import ArgumentError, NumericError

_GRAD_ENABLED = True

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr, opname):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {opname}")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None,
                 _op="tensor"):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        _check_finite(arr, _op)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # -- graph plumbing -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(np.asarray(grad, dtype=self.data.dtype),
                                  self.data.shape)

    def backward(self, grad=None):
        """Backpropagate from this node; accumulates into .grad of leaves."""
        if grad is None:
            if self.data.size != 1:
                raise ArgumentError("backward() without a gradient requires a scalar")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
                # free intermediate grads and the tape behind this node
                if node is not self:
                    node._backward = None
                    node._parents = ()

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out_data = self.data + other.data
        req = self.requires_grad or other.requires_grad

        def bw(g):
            if self.requires_grad:
                self.accumulate(g)
            if other.requires_grad:
                other.accumulate(g)

        return Tensor(out_data, req, (self, other), bw, "add")

    __radd__ = __add__

    def __neg__(self):
        def bw(g):
            self.accumulate(-g)

        return Tensor(-self.data, self.requires_grad, (self,), bw, "neg")

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        out_data = self.data * other.data
        req = self.requires_grad or other.requires_grad

        def bw(g):
            if self.requires_grad:
                self.accumulate(g * other.data)
            if other.requires_grad:
                other.accumulate(g * self.data)

        return Tensor(out_data, req, (self, other), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        out_data = self.data / other.data
        req = self.requires_grad or other.requires_grad

        def bw(g):
            if self.requires_grad:
                self.accumulate(g / other.data)
            if other.requires_grad:
                other.accumulate(-g * self.data / (other.data ** 2))

        return Tensor(out_data, req, (self, other), bw, "div")

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise ArgumentError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def bw(g):
            self.accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor(out_data, self.requires_grad, (self,), bw, "pow")

    def __matmul__(self, other):
        other = _as_tensor(other)
        out_data = np.matmul(self.data, other.data)
        req = self.requires_grad or other.requires_grad

        def bw(g):
            if self.requires_grad:
                ga = np.matmul(g, np.swapaxes(other.data, -1, -2))
                self.accumulate(_unbroadcast(ga, self.data.shape)
                                if ga.shape != self.data.shape else ga)
            if other.requires_grad:
                gb = np.matmul(np.swapaxes(self.data, -1, -2), g)
                other.accumulate(_unbroadcast(gb, other.data.shape)
                                 if gb.shape != other.data.shape else gb)

        return Tensor(out_data, req, (self, other), bw, "matmul")

    # -- reductions -----------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.accumulate(np.broadcast_to(g, self.data.shape))

        return Tensor(out_data, self.requires_grad, (self,), bw, "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise functions ------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)
        _check_finite(out_data, "exp")

        def bw(g):
            self.accumulate(g * out_data)

        return Tensor(out_data, self.requires_grad, (self,), bw, "exp")

    def log(self):
        out_data = np.log(self.data)
        _check_finite(out_data, "log")

        def bw(g):
            self.accumulate(g / self.data)

        return Tensor(out_data, self.requires_grad, (self,), bw, "log")

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bw(g):
            self.accumulate(g * 0.5 / out_data)

        return Tensor(out_data, self.requires_grad, (self,), bw, "sqrt")

    def tanh(self):
        out_data = np.tanh(self.data)

        def bw(g):
            self.accumulate(g * (1.0 - out_data ** 2))

        return Tensor(out_data, self.requires_grad, (self,), bw, "tanh")

    def erf(self):
        out_data = _erf(self.data)

        def bw(g):
            self.accumulate(g * (2.0 / np.sqrt(np.pi)) * np.exp(-self.data ** 2))

        return Tensor(out_data, self.requires_grad, (self,), bw, "erf")

    # -- shape ops ------------------------------------------------------

    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)

        def bw(g):
            self.accumulate(g.reshape(self.data.shape))

        return Tensor(out_data, self.requires_grad, (self,), bw, "reshape")

    def swapaxes(self, a, b):
        out_data = np.swapaxes(self.data, a, b)

        def bw(g):
            self.accumulate(np.swapaxes(g, a, b))

        return Tensor(out_data, self.requires_grad, (self,), bw, "swapaxes")

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self.accumulate(full)

        return Tensor(out_data, self.requires_grad, (self,), bw, "getitem")


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data):
    """A leaf tensor that never receives gradients."""
    return Tensor(data, requires_grad=False)


def parameter(data):
    """A trainable leaf tensor."""
    return Tensor(np.array(data, copy=True), requires_grad=True)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    req = any(t.requires_grad for t in tensors)
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + size)
                t.accumulate(g[tuple(sl)])
            offset += size

    return Tensor(out_data, req, tuple(tensors), bw, "concat")


def masked_softmax(logits, mask, axis=-1):
    """Softmax along ``axis`` with masked entries receiving exactly 0 weight.

    ``mask`` is a boolean numpy array broadcastable to ``logits``; True marks
    valid entries. Every softmax slice must contain at least one valid entry.
    """
    logits = _as_tensor(logits)
    mask_arr = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask_arr.any(axis=axis).all():
        raise ArgumentError("softmax slice with all entries masked")
    x = logits.data
    neg = np.where(mask_arr, x, -np.inf)
    m = np.max(neg, axis=axis, keepdims=True)
    e = np.where(mask_arr, np.exp(np.where(mask_arr, x, m) - m), 0.0)
    p = e / e.sum(axis=axis, keepdims=True)
    _check_finite(p, "masked_softmax")

    def bw(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        logits.accumulate(p * (g - dot))

    return Tensor(p, logits.requires_grad, (logits,), bw, "masked_softmax")


def softmax(x, axis=-1):
    """Numerically stable softmax; output sums to 1 along ``axis``."""
    x = _as_tensor(x)
    if x.data.size == 0:
        raise ArgumentError("softmax of an empty vector")
    return masked_softmax(x, np.ones(x.shape, dtype=bool), axis=axis)


def layer_norm(x, eps=1e-6, axis=-1):
    """Parameter-free layer norm: zero mean, unit (population) variance.

    No learnable scale or shift; ``eps`` guards the constant-input case.
    """
    x = _as_tensor(x)
    if eps <= 0:
        raise ArgumentError("layer_norm eps must be positive")
    mu = x.data.mean(axis=axis, keepdims=True)
    var = x.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    n = x.data.shape[axis]

    def bw(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        x.accumulate(inv * (g - gm - xhat * gx))

    return Tensor(xhat, x.requires_grad, (x,), bw, "layer_norm")


def gelu(x, approximate=False):
    """GELU activation. Exact-erf form by default; tanh approximation opt-in."""
    x = _as_tensor(x)
    if approximate:
        c = np.sqrt(2.0 / np.pi)
        inner = c * (x + 0.044715 * x ** 3)
        return x * 0.5 * (inner.tanh() + 1.0)
    phi = (x * _INV_SQRT2).erf() * 0.5 + 0.5
    return x * phi


def weighted_sum(alpha, stack):
    """Mix the leading axis of a constant ``stack`` by coefficients ``alpha``.

    out = sum_i alpha[i] * stack[i]; stack is a plain numpy array of shape
    (L, ...), alpha a length-L tensor. Linear in alpha, so the backward is a
    per-layer inner product with the upstream gradient.
    """
    alpha = _as_tensor(alpha)
    stack = np.asarray(stack)
    if alpha.data.ndim != 1 or stack.shape[0] != alpha.data.shape[0]:
        raise ArgumentError("weighted_sum: alpha length must match stack depth")
    out_data = np.tensordot(alpha.data, stack, axes=1)

    def bw(g):
        flat = stack.reshape(stack.shape[0], -1)
        alpha.accumulate(flat @ np.asarray(g).reshape(-1))

    return Tensor(out_data, alpha.requires_grad, (alpha,), bw, "weighted_sum")


def l2_normalize(x, axis=-1, eps=0.0):
    """Rows scaled to unit L2 norm; zero-norm rows are a numeric error."""
    x = _as_tensor(x)
    sq = (x * x).sum(axis=axis, keepdims=True)
    if np.any(sq.data <= eps):
        raise NumericError("cannot normalize a zero-norm vector")
    return x / sq.sqrt()


def logsumexp(x, axis=-1):
    """log(sum(exp(x))) with max-shift stabilization."""
    x = _as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = x - constant(m)
    out = shifted.exp().sum(axis=axis).log() + constant(np.squeeze(m, axis=axis))
    return out
