"""Dense f64 tensors with tape-based reverse-mode differentiation.

Values live in row-major numpy arrays. Every differentiable operation
records one node on the thread-local tape; ``backward`` replays the tape
in reverse recording order (a reverse topological order, since an output
is always recorded after its inputs) and accumulates gradients into every
``requires_grad`` tensor reachable from the loss.

One forward+backward episode belongs to one thread; independent model
replicas on separate threads each get their own tape. Clearing a tape
drops its records only, it never touches tensor values or gradients.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import DivisibilityError, ShapeError, TapeError


class Tensor:
    """Dense 64-bit float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_node")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar -------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class _Node:
    __slots__ = ("inputs", "output", "backward_fn", "tape", "epoch")

    def __init__(self, inputs, output, backward_fn, tape):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.tape = tape
        self.epoch = tape._epoch


class ComputationTape:
    """Ordered record of executed operations for one reverse sweep."""

    def __init__(self):
        self.nodes = []
        self._used = False
        self._epoch = 0

    def record(self, node):
        self.nodes.append(node)

    def clear(self):
        """Drop all records. Tensor values and gradients are untouched."""
        self.nodes.clear()
        self._used = False
        self._epoch += 1

    def __len__(self):
        return len(self.nodes)


_tls = threading.local()


def active_tape() -> ComputationTape:
    tape = getattr(_tls, "tape", None)
    if tape is None:
        tape = _tls.tape = ComputationTape()
    return tape


def _recording() -> bool:
    return getattr(_tls, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = _recording()
    _tls.grad_enabled = False
    try:
        yield
    finally:
        _tls.grad_enabled = prev


@contextmanager
def tape_episode():
    """Run one forward+backward episode and clear the tape afterwards."""
    tape = active_tape()
    try:
        yield tape
    finally:
        tape.clear()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(out_data, inputs, backward_fn) -> Tensor:
    out = Tensor(out_data)
    if _recording() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = _Node(inputs, out, backward_fn, active_tape())
        active_tape().record(node)
        out._node = node
    return out


def backward(loss: Tensor):
    """Reverse sweep seeding d(loss)/d(loss) = 1.

    The loss must be a scalar produced on the active tape of this thread,
    and the tape must not have been swept already (clear it between
    episodes). Gradients accumulate into ``.grad`` of every requires_grad
    tensor reachable from the loss.
    """
    if loss.data.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    node = loss._node
    if node is None or node.tape is not tape or node.epoch != tape._epoch:
        raise TapeError("backward on a tensor detached from the active tape")
    if tape._used:
        raise TapeError("tape already swept; clear() before the next episode")
    tape._used = True
    loss.grad = np.ones_like(loss.data)
    for n in reversed(tape.nodes):
        out_grad = n.output.grad
        if out_grad is None:
            continue
        grads = n.backward_fn(out_grad)
        for t, g in zip(n.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum gradient g down to a broadcast input's original shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise arithmetic ---------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a):
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a):
    a = _as_tensor(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def log(a):
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    """Elementwise square root; subgradient 0 where the input is 0."""
    a = _as_tensor(a)
    r = np.sqrt(a.data)
    safe = np.where(r > 0, r, 1.0)

    def bw(g):
        return (np.where(r > 0, 0.5 * g / safe, 0.0),)

    return _make(r, (a,), bw)


# reductions and shape ops --------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        count = a.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        count = a.shape[axis]
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape):
    a = _as_tensor(a)
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),)
    )


def flip(a, axis=-1):
    a = _as_tensor(a)
    return _make(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis),))


def concat(parts, axis=0):
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat needs at least one part")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return _make(out, tuple(parts), bw)


def split(a, axis, n):
    """Split into n equal parts along axis; rejects non-divisible extents."""
    a = _as_tensor(a)
    extent = a.shape[axis]
    if n < 1 or extent % n != 0:
        raise DivisibilityError(extent, n, axis=axis)
    step = extent // n
    outs = []
    for j in range(n):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(j * step, (j + 1) * step)
        idx = tuple(idx)

        def bw(g, idx=idx):
            z = np.zeros(a.shape)
            z[idx] = g
            return (z,)

        outs.append(_make(a.data[idx].copy(), (a,), bw))
    return outs


def take_pairs(a, rows, cols):
    """Gather a[rows[i], cols[i]] as a 1-D tensor (duplicates allowed)."""
    a = _as_tensor(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = a.data[rows, cols]

    def bw(g):
        z = np.zeros(a.shape)
        np.add.at(z, (rows, cols), g)
        return (z,)

    return _make(out, (a,), bw)


# linear algebra -------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(out, (a, b), bw)


# convolution and pooling ---------------------------------------------


def conv2d(x, w, stride=1, pad=0):
    """2-D cross-correlation of (C,H,W) or (B,C,H,W) input with (Co,Ci,k,k).

    k must be odd; the output extent (H + 2*pad - k)/stride + 1 must be
    integral. k=1, stride=1, pad=0 degenerates to a per-pixel channel
    projection.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    single = x.ndim == 3
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d weight must be (Co,Ci,k,k), got {w.shape}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ShapeError(f"conv2d kernel extent must be odd, got {k}")
    x4 = x.data[None] if single else x.data
    if x4.ndim != 4:
        raise ShapeError(f"conv2d input must be (C,H,W) or (B,C,H,W), got {x.shape}")
    if x4.shape[1] != w.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}"
        )
    h, wd = x4.shape[2], x4.shape[3]
    if h + 2 * pad < k or wd + 2 * pad < k:
        raise ShapeError(f"conv2d input {x.shape} smaller than kernel {k}")
    if (h + 2 * pad - k) % stride or (wd + 2 * pad - k) % stride:
        raise ShapeError(
            f"conv2d output extent not integral for input {x.shape}, "
            f"k={k}, stride={stride}, pad={pad}"
        )
    xc = np.ascontiguousarray(x4)
    wc = np.ascontiguousarray(w.data)
    out = kernels.conv2d_forward(xc, wc, stride, pad)

    def bw(g):
        g4 = np.ascontiguousarray(g[None] if single else g)
        gx = kernels.conv2d_backward_input(g4, wc, stride, pad, h, wd)
        gw = kernels.conv2d_backward_weight(g4, xc, stride, pad, k)
        return (gx[0] if single else gx, gw)

    return _make(out[0] if single else out, (x, w), bw)


def avg_pool2d(x, k, stride):
    """Average pooling with floor semantics: partial windows are dropped."""
    x = _as_tensor(x)
    single = x.ndim == 3
    x4 = x.data[None] if single else x.data
    if x4.ndim != 4:
        raise ShapeError(f"avg_pool2d input must be (C,H,W) or (B,C,H,W), got {x.shape}")
    h, wd = x4.shape[2], x4.shape[3]
    if h < k or wd < k:
        raise ShapeError(f"avg_pool2d window {k} exceeds input {x.shape}")
    xc = np.ascontiguousarray(x4)
    out = kernels.avg_pool2d_forward(xc, k, stride)

    def bw(g):
        g4 = np.ascontiguousarray(g[None] if single else g)
        gx = kernels.avg_pool2d_backward(g4, k, stride, h, wd)
        return (gx[0] if single else gx,)

    return _make(out[0] if single else out, (x,), bw)


def global_avg_pool(x):
    """Mean over the spatial axes: (C,H,W) -> (C,) or (B,C,H,W) -> (B,C)."""
    x = _as_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"global_avg_pool input must be 3- or 4-D, got {x.shape}")
    h, wd = x.shape[-2], x.shape[-1]
    out = x.data.mean(axis=(-2, -1))

    def bw(g):
        return (np.broadcast_to(g[..., None, None] / (h * wd), x.shape).copy(),)

    return _make(out, (x,), bw)


def log_softmax(x, axis=-1):
    """Numerically stable log-softmax along one axis."""
    x = _as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    logz = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - logz

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw)
