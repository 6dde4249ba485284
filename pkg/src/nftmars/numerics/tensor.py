"""Dense float64 tensors with reverse-mode gradient accumulation.

Every op returns a new :class:`Tensor`. When any operand requires grad the
result keeps references to its operands and a closure that pushes the
incoming gradient back to them; :meth:`Tensor.backward` replays those
closures in reverse topological order. The graph is rebuilt on every forward
pass.
"""
import math

import numpy as np

from . import kernels

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _check_finite(arr, op):
    # a single reduction is NaN/inf whenever any entry is; overflow falls back to the full scan
    with np.errstate(over="ignore", invalid="ignore"):
        total = arr.sum()
    if not np.isfinite(total) and not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: non-finite values encountered")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _op="leaf"):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data.astype(np.float64, copy=False)
        if _op == "leaf":
            _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad and _op == "leaf" else None
        self._parents = _parents
        self._backward = None
        self.op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(np.broadcast_to(g, self.data.shape), dtype=np.float64)
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {self.shape}")
        topo = _topological_order(self)
        # interior grads hold this pass only; leaves keep accumulating
        for node in topo:
            if node._backward is not None:
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                else:
                    node._backward(node.grad)

    # operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return mul(self, Tensor(1.0 / _as_tensor(other).data))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op, backward):
    _check_finite(data, op)
    if any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True, _parents=tuple(parents), _op=op)
        out._backward = backward
        return out
    return Tensor(data, _op=op)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise binary -------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))
    return _make(a.data + b.data, (a, b), "add", backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.shape))
    return _make(a.data - b.data, (a, b), "sub", backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))
    return _make(a.data * b.data, (a, b), "mul", backward)


def scale(a, c):
    """Multiply by a Python scalar constant."""
    a = _as_tensor(a)
    c = float(c)

    def backward(g):
        a._accumulate(g * c)
    return _make(a.data * c, (a,), "scalar-mul", backward)


# linear algebra -----------------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)
    return _make(a.data @ b.data, (a, b), "matmul", backward)


def inner(a, b):
    """Row-wise inner product along the last axis (broadcasting rows)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"inner-product: incompatible shapes {a.shape} and {b.shape}")
    _broadcast_shape("inner-product", a, b)

    def backward(g):
        g = g[..., None]
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))
    return _make(np.sum(a.data * b.data, axis=-1), (a, b), "inner-product", backward)


def transpose(a):
    a = _as_tensor(a)

    def backward(g):
        a._accumulate(g.T)
    return _make(a.data.T, (a,), "transpose", backward)


def reshape(a, shape):
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None

    def backward(g):
        a._accumulate(g.reshape(a.shape))
    return _make(data, (a,), "reshape", backward)


# reductions ---------------------------------------------------------------

def tsum(a, axis=None):
    a = _as_tensor(a)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))
    return _make(np.sum(a.data, axis=axis), (a,), "sum", backward)


def mean(a, axis=None):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g / n, a.shape))
    return _make(np.mean(a.data, axis=axis), (a,), "mean", backward)


def sumsq(a):
    a = _as_tensor(a)

    def backward(g):
        a._accumulate(2.0 * g * a.data)
    return _make(np.sum(a.data * a.data), (a,), "sumsq", backward)


# structural ---------------------------------------------------------------

def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[k] != ref[k] for k in range(len(ref)) if k != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])
    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, "concat", backward)


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)


def getitem(a, idx):
    a = _as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)
    return _make(a.data[idx], (a,), "getitem", backward)


def gather(a, rows):
    """Select rows ``a[rows]``; repeated rows accumulate on the way back."""
    a = _as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)

    def backward(g):
        a._accumulate(kernels.segment_sum(g, rows, a.shape[0]))
    return _make(a.data[rows], (a,), "gather", backward)


def segment_sum(values, seg, n):
    """Sum rows of ``values`` into ``n`` buckets given by ``seg``."""
    values = _as_tensor(values)
    seg = np.asarray(seg, dtype=np.int64)

    def backward(g):
        values._accumulate(g[seg])
    return _make(kernels.segment_sum(values.data, seg, n), (values,), "segment-sum", backward)


def edge_dot(a, b, ia, ib):
    """Per-edge inner product ``a[ia[e]] . b[ib[e]]`` without gathering rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    ia = np.asarray(ia, dtype=np.int64)
    ib = np.asarray(ib, dtype=np.int64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1] or ia.shape != ib.shape:
        raise ShapeError(f"edge-dot: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga, gb = kernels.edge_dot_grad(g, a.data, b.data, ia, ib)
        if a.requires_grad:
            a._accumulate(ga)
        if b.requires_grad:
            b._accumulate(gb)
    return _make(kernels.edge_dot(a.data, b.data, ia, ib), (a, b), "edge-dot", backward)


def edge_aggregate(x, w, src, dst, n):
    """``out[t] = sum_{e: dst[e]=t} w[e] * x[src[e]]`` for ``n`` destination rows."""
    x, w = _as_tensor(x), _as_tensor(w)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if x.ndim != 2 or w.ndim != 1 or w.shape[0] != src.shape[0] or src.shape != dst.shape:
        raise ShapeError(f"edge-aggregate: incompatible shapes {x.shape}, {w.shape}")

    def backward(g):
        gx, gw = kernels.edge_aggregate_grad(g, x.data, w.data, src, dst)
        if x.requires_grad:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
    return _make(kernels.edge_aggregate(x.data, w.data, src, dst, n), (x, w), "edge-aggregate", backward)


def segment_softmax(scores, seg, n):
    """Softmax of 1-d ``scores`` within each bucket of ``seg``."""
    scores = _as_tensor(scores)
    seg = np.asarray(seg, dtype=np.int64)
    if scores.ndim != 1 or scores.shape[0] != seg.shape[0]:
        raise ShapeError(f"segment-softmax: incompatible shapes {scores.shape} and {seg.shape}")
    p = kernels.segment_softmax(scores.data, seg, n)

    def backward(g):
        dot = kernels.segment_sum(p * g, seg, n)
        scores._accumulate(p * (g - dot[seg]))
    return _make(p, (scores,), "segment-softmax", backward)


# elementwise unary --------------------------------------------------------

def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - y * y))
    return _make(y, (a,), "tanh", backward)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = _as_tensor(a)
    y = _sigmoid(np.atleast_1d(a.data)).reshape(a.shape)

    def backward(g):
        a._accumulate(g * y * (1.0 - y))
    return _make(y, (a,), "sigmoid", backward)


def log_sigmoid(a):
    """``ln sigmoid(x)`` without overflow for large ``|x|``."""
    a = _as_tensor(a)
    x = a.data
    y = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        a._accumulate(g * _sigmoid(np.atleast_1d(-x)).reshape(x.shape))
    return _make(y, (a,), "log-sigmoid", backward)


def leaky_relu(a, slope=LEAKY_SLOPE):
    a = _as_tensor(a)
    neg = a.data < 0

    def backward(g):
        a._accumulate(np.where(neg, slope * g, g))
    return _make(np.where(neg, slope * a.data, a.data), (a,), "leaky_relu", backward)


def relu(a):
    a = _as_tensor(a)
    pos = a.data > 0

    def backward(g):
        a._accumulate(g * pos)
    return _make(a.data * pos, (a,), "relu", backward)


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise NonFiniteError("natural-log: argument must be positive")

    def backward(g):
        a._accumulate(g / a.data)
    return _make(np.log(a.data), (a,), "natural-log", backward)


def clamp(a, lo, hi):
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        a._accumulate(g * inside)
    return _make(np.clip(a.data, lo, hi), (a,), "clamp", backward)


def softmax(a):
    """Softmax along the last axis."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=-1, keepdims=True)

    def backward(g):
        a._accumulate(y * (g - np.sum(g * y, axis=-1, keepdims=True)))
    return _make(y, (a,), "softmax", backward)


# image ops (NHWC) -----------------------------------------------------------

def conv2d(x, w, b=None):
    """3x3 'same' convolution. ``x``: (N, H, W, Cin), ``w``: (3, 3, Cin, Cout)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[:2] != (3, 3) or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((n, h, wd, cout))
    for dy in range(3):
        for dx in range(3):
            out += xp[:, dy:dy + h, dx:dx + wd, :] @ w.data[dy, dx]
    parents = (x, w)
    if b is not None:
        b = _as_tensor(b)
        out += b.data
        parents = (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, cout)
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for dy in range(3):
                for dx in range(3):
                    gp[:, dy:dy + h, dx:dx + wd, :] += g @ w.data[dy, dx].T
            x._accumulate(gp[:, 1:-1, 1:-1, :])
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for dy in range(3):
                for dx in range(3):
                    gw[dy, dx] = np.tensordot(xp[:, dy:dy + h, dx:dx + wd, :], g, axes=([0, 1, 2], [0, 1, 2]))
            w._accumulate(gw)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))
    return _make(out, parents, "conv2d", backward)


def max_pool2d(x):
    """2x2 max pooling with stride 2."""
    x = _as_tensor(x)
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d: spatial dims must be even, got {x.shape}")
    blocks = x.data.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        x._accumulate(gb.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape))
    return _make(out, (x,), "max_pool2d", backward)


def upsample2d(x):
    """Nearest-neighbour 2x upsampling."""
    x = _as_tensor(x)
    n, h, w, c = x.shape

    def backward(g):
        x._accumulate(g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)))
    return _make(np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2), (x,), "upsample2d", backward)


_UNARY = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "leaky_relu": leaky_relu,
    "softmax": softmax,
    "natural-log": log,
    "mean": mean,
}
_BINARY = {
    "matmul": matmul,
    "add": add,
    "inner-product": inner,
}


def forward_op(kind, *operands, **kwargs):
    """Apply a primitive by name; mirrors calling the op function directly."""
    if kind in _UNARY:
        return _UNARY[kind](*operands, **kwargs)
    if kind in _BINARY:
        return _BINARY[kind](*operands, **kwargs)
    if kind == "scalar-mul":
        return scale(*operands, **kwargs)
    if kind == "concat":
        return concat(list(operands), **kwargs)
    raise ValueError(f"unknown op {kind!r}")


def no_grad_copy(t):
    return Tensor(t.data.copy())


def glorot(rng, fan_in, fan_out, shape=None):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))
