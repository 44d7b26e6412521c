"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

A Tensor wraps a numpy float64 array plus the bookkeeping needed for
backpropagation: the tensors it was computed from and a closure that maps the
output gradient to per-parent gradients. Calling ``backward()`` on a scalar
walks the graph in reverse topological order, accumulates ``.grad`` on every
tensor that requires a gradient, and then frees the graph.

Every completed operation checks its result for NaN/Inf and raises
NumericalError instead of propagating silent garbage.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateRowError, NumericalError, ShapeError

# Additive mask penalty: exp(-1e9) underflows to exactly 0.0 in float64, which
# makes invalid attention weights bitwise zero and mask neutrality exact.
MASK_PENALTY = 1e9
LAYER_NORM_EPS = 1e-5


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericalError("tensor contains non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def backward(self):
        """Backpropagate from a scalar; accumulates into ``.grad`` and frees the graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        order = _toposort(self)
        self.grad = _accum(self.grad, np.ones_like(self.data))
        for node in order:
            if node._vjp is None or node.grad is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if parent.requires_grad and g is not None:
                    parent.grad = _accum(parent.grad, g)
        # free the tape; leaves keep their grads
        for node in order:
            node._parents = ()
            node._vjp = None


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(existing, g):
    # Never mutate in place: vjp outputs may alias other grad buffers (or
    # views of them), so the second contribution allocates a fresh array.
    if existing is None:
        return g if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    return existing + g


def _toposort(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and (p.requires_grad or p._vjp is not None):
                stack.append((p, False))
    return list(reversed(order))


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(data, parents, vjp):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents) if req else (),
                  _vjp=vjp if req else None)


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def scale(a, c):
    a = _wrap(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def sin(a):
    a = _wrap(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = _wrap(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def exp(a):
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)  # overflow surfaces as NumericalError in _make
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = _wrap(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)  # log(<=0) surfaces as NumericalError in _make
    return _make(out, (a,), lambda g: (g / a.data,))


def relu(a):
    a = _wrap(a)
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0.0),))


# -- shape plumbing ----------------------------------------------------------

def reshape(a, shape):
    a = _wrap(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    a = _wrap(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swap_last(a):
    """Transpose the last two axes (matrix transpose over batch dims)."""
    a = _wrap(a)
    perm = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, perm)


def expand(a, shape):
    a = _wrap(a)
    old = a.shape
    return _make(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, old),))


def unsqueeze(a, axis):
    a = _wrap(a)
    return reshape(a, a.shape[:axis % (a.ndim + 1)] + (1,) + a.shape[axis % (a.ndim + 1):])


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def select(a, axis, index):
    """Pick one slice along ``axis`` (the axis is dropped)."""
    a = _wrap(a)
    axis = axis % a.ndim
    idx = tuple([slice(None)] * axis + [index])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), vjp)


def slice_axis(a, axis, start, stop):
    a = _wrap(a)
    axis = axis % a.ndim
    idx = tuple([slice(None)] * axis + [slice(start, stop)])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), vjp)


# -- reductions ---------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- core differentiable kernels ----------------------------------------------

def matmul(a, b):
    """Batched matrix product; leading batch extents broadcast."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    with np.errstate(over="ignore"):  # overflow becomes NumericalError in _make
        out = np.matmul(a.data, b.data)
    return _make(out, (a, b), vjp)


def masked_softmax(scores, valid):
    """Softmax over the last axis restricted to positions where ``valid`` is 1.

    Invalid logits receive an additive -1e9 before the softmax (exp underflows
    to exactly 0.0), and invalid weights are zeroed afterwards, so each row is
    exactly the softmax over its valid scores and invalid positions are
    bitwise zero. ``valid`` is a constant {0,1} array broadcastable to
    ``scores``; gradients flow through scores only.
    """
    scores = _wrap(scores)
    v = np.broadcast_to(np.asarray(valid, dtype=np.float64), scores.shape)
    if not np.all((v == 0.0) | (v == 1.0)):
        raise ShapeError("validity mask must be binary")
    if np.any(v.sum(axis=-1) == 0.0):
        raise DegenerateRowError("softmax row with zero valid positions")
    z = scores.data - MASK_PENALTY * (1.0 - v)
    z = z - z.max(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):  # garbage becomes NumericalError in _make
        e = np.exp(z) * v
        p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return _make(p, (scores,), vjp)


def layer_norm(x, gain, bias):
    """Per-row standardization over the last axis (population variance,
    epsilon 1e-5) followed by an elementwise affine map."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},), "
                         f"got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x.data - mu) * inv

    def vjp(g):
        dg = (g * xhat).reshape(-1, d).sum(axis=0)
        db = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dg, db

    return _make(xhat * gain.data + bias.data, (x, gain, bias), vjp)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits).

    logits: [B x K]; labels: int array [B]. Returns a scalar.
    """
    logits = _wrap(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy expects [B x K] logits and [B] labels, "
                         f"got {logits.shape} and {labels.shape}")
    b, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"labels out of range for {k} classes")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    nll = (lse - z[np.arange(b), labels]).mean()
    softmax = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)

    def vjp(g):
        grad = softmax.copy()
        grad[np.arange(b), labels] -= 1.0
        return (grad * (float(g) / b),)

    return _make(nll, (logits,), vjp)
