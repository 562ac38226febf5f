"""Dense tensors with reverse-mode automatic differentiation.

A small tape-based engine, just big enough for the convolutional
generator/discriminator/encoder stacks in this package.  numpy arrays are
the storage; float32 is the training dtype, float64 is used when a
trustworthy numeric oracle is wanted (see grad_check).

Usage pattern::

    with record():
        y = mean(mul(x, x))
    backward(y)        # populates .grad on tensors with requires_grad=True

Outside a record() context every op is a pure value computation and nothing
is taped, so inference is free of bookkeeping.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

# guard for log/division near 0 (adversarial losses evaluate log near 0/1)
EPS = 1e-8

DEFAULT_DTYPE = np.float32


class TensorError(ValueError):
    pass


class ShapeError(TensorError):
    """Input shapes do not conform to a primitive's shape rule."""


class NumericFault(TensorError):
    """A primitive produced (or was handed) a non-finite value."""


class GraphError(TensorError):
    """Backward misuse: non-scalar root, consumed tape, detached root."""


class Node:
    """One recorded primitive application."""

    __slots__ = ("out", "inputs", "backward", "name")

    def __init__(self, out, inputs, backward, name):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.name = name


class Graph:
    """Ordered tape of primitive applications.

    Nodes are appended in forward order, so every node's inputs precede it.
    A graph supports exactly one backward pass.
    """

    __slots__ = ("nodes", "consumed")

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False


_graph_stack: list[Graph] = []


@contextmanager
def record():
    """Open a fresh tape; ops applied inside are recorded onto it."""
    g = Graph()
    _graph_stack.append(g)
    try:
        yield g
    finally:
        _graph_stack.pop()


class Tensor:
    """n-dimensional float array, optionally participating in a tape."""

    __slots__ = ("data", "requires_grad", "grad", "graph")

    def __init__(self, data, requires_grad=False, dtype=None, _check=True):
        if dtype is None and not isinstance(data, (np.ndarray, np.generic)):
            dtype = DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if _check and not np.isfinite(arr).all():
            raise NumericFault("tensor construction: non-finite values in data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.graph = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _scalar_err(self)

    def detached(self):
        """View of the same storage with no grad participation."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t.graph = None
        return t

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flags = []
        if self.requires_grad:
            flags.append("requires_grad")
        if self.graph is not None:
            flags.append("taped")
        tail = (", " + ",".join(flags)) if flags else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{tail})"

    # operator sugar over the registered primitives
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self):
        return mean(self)


def _scalar_err(t):
    raise GraphError(f"expected scalar tensor, got shape {tuple(t.shape)}")


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def constant(x, dtype=None):
    """Tensor that never joins a tape (weights borrowed as fixed features)."""
    return as_tensor(x, dtype=dtype).detached() if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------

_PRIMITIVES = {}


def _primitive(name):
    def deco(fn):
        _PRIMITIVES[name] = fn
        return fn

    return deco


def apply_primitive(name, inputs, **attrs):
    """Apply a registered primitive; record it if any input is live.

    An input is live when it requires gradients or was itself produced on
    the currently active tape.  Identical inputs always yield bit-identical
    outputs; any non-finite output raises NumericFault.
    """
    build = _PRIMITIVES.get(name)
    if build is None:
        raise TensorError(f"unknown primitive '{name}'")
    ts = tuple(as_tensor(x) for x in inputs)
    g = _graph_stack[-1] if _graph_stack else None
    if g is not None:
        needs = tuple(t.requires_grad or (t.graph is g) for t in ts)
    else:
        needs = (False,) * len(ts)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out_data, backward_fn = build(ts, attrs, needs)
    if not np.isfinite(out_data).all():
        raise NumericFault(f"{name}: non-finite value in output")
    out = Tensor(out_data, _check=False)
    if any(needs):
        out.graph = g
        g.nodes.append(Node(out, ts, backward_fn, name))
    return out


def backward(root: Tensor):
    """Reverse sweep from a recorded scalar; accumulates into .grad.

    Accumulation is additive: a second backward over a different graph that
    reaches the same parameter adds to the existing .grad.  Each graph may
    be swept once only.
    """
    g = root.graph
    if g is None:
        raise GraphError("backward: root is not attached to a recorded graph")
    if g.consumed:
        raise GraphError("backward: graph already consumed by a previous backward")
    if root.size != 1:
        raise GraphError(f"backward: root must be scalar, got shape {tuple(root.shape)}")
    g.consumed = True
    flowing = {id(root): np.ones_like(root.data)}
    for node in reversed(g.nodes):
        gout = flowing.pop(id(node.out), None)
        if gout is None:
            continue
        gins = node.backward(gout)
        for inp, gin in zip(node.inputs, gins):
            if gin is None:
                continue
            if inp.requires_grad:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gin
            elif inp.graph is g:
                k = id(inp)
                if k in flowing:
                    flowing[k] = flowing[k] + gin
                else:
                    flowing[k] = gin


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def _ew_shapes(name, a, b):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{name}: shapes {tuple(a.shape)} and {tuple(b.shape)} do not match")


def _reduce_to(grad, t):
    # inverse of scalar broadcasting
    if grad.shape == t.shape:
        return grad
    return grad.sum().reshape(t.shape).astype(t.dtype, copy=False)


@_primitive("add")
def _add(ts, attrs, needs):
    a, b = ts
    _ew_shapes("add", a, b)
    out = a.data + b.data

    def bwd(g):
        return (_reduce_to(g, a) if needs[0] else None,
                _reduce_to(g, b) if needs[1] else None)

    return out, bwd


@_primitive("sub")
def _sub(ts, attrs, needs):
    a, b = ts
    _ew_shapes("sub", a, b)
    out = a.data - b.data

    def bwd(g):
        return (_reduce_to(g, a) if needs[0] else None,
                _reduce_to(-g, b) if needs[1] else None)

    return out, bwd


@_primitive("mul")
def _mul(ts, attrs, needs):
    a, b = ts
    _ew_shapes("mul", a, b)
    out = a.data * b.data

    def bwd(g):
        return (_reduce_to(g * b.data, a) if needs[0] else None,
                _reduce_to(g * a.data, b) if needs[1] else None)

    return out, bwd


def add(a, b):
    return apply_primitive("add", (a, b))


def sub(a, b):
    return apply_primitive("sub", (a, b))


def mul(a, b):
    return apply_primitive("mul", (a, b))


# ---------------------------------------------------------------------------
# matmul and layer arithmetic
# ---------------------------------------------------------------------------


@_primitive("matmul")
def _matmul(ts, attrs, needs):
    a, b = ts
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: need [m,k] @ [k,n], got {tuple(a.shape)} @ {tuple(b.shape)}")
    out = a.data @ b.data

    def bwd(g):
        return (g @ b.data.T if needs[0] else None,
                a.data.T @ g if needs[1] else None)

    return out, bwd


def matmul(a, b):
    return apply_primitive("matmul", (a, b))


@_primitive("bias_add")
def _bias_add(ts, attrs, needs):
    x, b = ts
    if b.ndim != 1:
        raise ShapeError(f"bias_add: bias must be 1-d, got {tuple(b.shape)}")
    if x.ndim == 2 and x.shape[1] == b.shape[0]:
        out = x.data + b.data
        axes = (0,)
    elif x.ndim == 4 and x.shape[1] == b.shape[0]:
        out = x.data + b.data.reshape(1, -1, 1, 1)
        axes = (0, 2, 3)
    else:
        raise ShapeError(
            f"bias_add: cannot add bias {tuple(b.shape)} to input {tuple(x.shape)}")

    def bwd(g):
        return (g if needs[0] else None,
                g.sum(axis=axes) if needs[1] else None)

    return out, bwd


def bias_add(x, b):
    return apply_primitive("bias_add", (x, b))


# ---------------------------------------------------------------------------
# 2-d convolution (NCHW, zero padding, integer stride)
# ---------------------------------------------------------------------------


# transient buffers reused across calls; graph recording and backward are
# single-threaded (see module concurrency notes), and nothing handed out
# here survives past the op that asked for it
_WORKSPACES: dict = {}


def _ws(tag, shape, dtype):
    key = (tag, shape, np.dtype(dtype).str)
    buf = _WORKSPACES.get(key)
    if buf is None:
        buf = np.empty(shape, dtype=dtype)
        _WORKSPACES[key] = buf
    return buf


def clear_workspaces():
    _WORKSPACES.clear()


def _im2col(xp, kh, kw, stride, oh, ow):
    n, c = xp.shape[:2]
    cols = _ws("im2col", (n, c, kh, kw, oh, ow), xp.dtype)
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = xp[:, :, u:u + stride * oh:stride, v:v + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(cols, out, kh, kw, stride, oh, ow, pad=0):
    """Scatter-add patch columns into `out`, cropping a virtual padding of
    `pad` on each side (the inverse of padding plus im2col)."""
    n, c, h, w = out.shape
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    out[...] = 0
    for u in range(kh):
        for v in range(kw):
            # rows hit by tap u: r = u + stride*i - pad, keep 0 <= r < h
            i0 = max(0, -(-(pad - u) // stride)) if u < pad else 0
            j0 = max(0, -(-(pad - v) // stride)) if v < pad else 0
            i1 = min(oh - 1, (h - 1 + pad - u) // stride)
            j1 = min(ow - 1, (w - 1 + pad - v) // stride)
            if i0 > i1 or j0 > j1:
                continue
            r0 = u + stride * i0 - pad
            c0 = v + stride * j0 - pad
            ni, nj = i1 - i0 + 1, j1 - j0 + 1
            out[:, :, r0:r0 + stride * ni:stride, c0:c0 + stride * nj:stride] += \
                cols[:, :, u, v, i0:i0 + ni, j0:j0 + nj]
    return out


def _pad4(x, p, tag="pad"):
    if p == 0:
        return x
    n, c, h, w = x.shape
    xp = _ws(tag, (n, c, h + 2 * p, w + 2 * p), x.dtype)
    xp[...] = 0
    xp[:, :, p:p + h, p:p + w] = x
    return xp


@_primitive("conv2d")
def _conv2d(ts, attrs, needs):
    x, w = ts
    stride, pad = attrs["stride"], attrs["pad"]
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input and kernel, got {tuple(x.shape)}, {tuple(w.shape)}")
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv2d: input channels {c} != kernel channels {cw}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} too large for input {h}x{wd} with pad {pad}")
    xp = _pad4(x.data, pad)
    cols = _im2col(xp, kh, kw, stride, oh, ow)          # [n, c*kh*kw, oh*ow]
    w2 = w.data.reshape(o, c * kh * kw)
    out = np.matmul(w2, cols).reshape(n, o, oh, ow)

    def bwd(g):
        # cols is a shared workspace, so it is recomputed here rather than
        # kept alive between forward and backward
        g2 = g.reshape(n, o, oh * ow)
        gw = None
        if needs[1]:
            xb = _pad4(x.data, pad)
            cb = _im2col(xb, kh, kw, stride, oh, ow)
            prod = np.matmul(g2, cb.transpose(0, 2, 1),
                             out=_ws("gw3", (n, o, c * kh * kw), g.dtype))
            gw = prod.sum(axis=0).reshape(w.shape)
        gx = None
        if needs[0]:
            if stride == 1 and o < c and kh == kw and kh - 1 - pad >= 0:
                # gather on the cheap (output-channel) side: correlate the
                # upstream gradient with flipped kernels
                wf = np.ascontiguousarray(
                    w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(c, o * kh * kw)
                gp = _pad4(g, kh - 1 - pad)
                gcols = _im2col(gp, kh, kw, 1, h, wd)
                gx = np.matmul(wf, gcols).reshape(n, c, h, wd)
            else:
                dcols = np.matmul(w2.T, g2, out=_ws("dcols", (n, c * kh * kw, oh * ow), g.dtype))
                gx = _col2im(dcols, np.empty((n, c, h, wd), dtype=g.dtype),
                             kh, kw, stride, oh, ow, pad=pad)
        return gx, gw

    return out, bwd


@_primitive("conv_transpose2d")
def _conv_transpose2d(ts, attrs, needs):
    x, w = ts
    stride, pad = attrs["stride"], attrs["pad"]
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(
            f"conv_transpose2d: need 4-d input and kernel, got {tuple(x.shape)}, {tuple(w.shape)}")
    n, c, h, wd = x.shape
    cw, o, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv_transpose2d: input channels {c} != kernel channels {cw}")
    oh = (h - 1) * stride + kh - 2 * pad
    ow = (wd - 1) * stride + kw - 2 * pad
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv_transpose2d: output collapsed for input {h}x{wd} with pad {pad}")
    x2 = x.data.reshape(n, c, h * wd)
    w2 = w.data.reshape(c, o * kh * kw)
    cols = np.matmul(w2.T, x2, out=_ws("dcols", (n, o * kh * kw, h * wd), x.dtype))
    out = _col2im(cols, np.empty((n, o, oh, ow), dtype=x.dtype), kh, kw, stride, h, wd,
                  pad=pad)

    def bwd(g):
        gp = _pad4(g, pad)
        gcols = _im2col(gp, kh, kw, stride, h, wd)        # [n, o*kh*kw, h*wd]
        gx = None
        if needs[0]:
            gx = np.matmul(w2, gcols).reshape(x.shape)
        gw = None
        if needs[1]:
            prod = np.matmul(x2, gcols.transpose(0, 2, 1),
                             out=_ws("gw3", (n, c, o * kh * kw), g.dtype))
            gw = prod.sum(axis=0).reshape(w.shape)
        return gx, gw

    return out, bwd


def conv2d(x, w, stride=1, pad=0):
    """Cross-correlation of x [N,C,H,W] with w [O,C,kh,kw]."""
    return apply_primitive("conv2d", (x, w), stride=stride, pad=pad)


def conv_transpose2d(x, w, stride=1, pad=0):
    """Transposed convolution of x [N,C,H,W] with w [C,O,kh,kw]."""
    return apply_primitive("conv_transpose2d", (x, w), stride=stride, pad=pad)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


@_primitive("leaky_relu")
def _leaky_relu(ts, attrs, needs):
    (x,) = ts
    slope = attrs.get("slope", 0.2)
    if not 0 <= slope < 1:
        raise TensorError(f"leaky_relu: slope must be in [0, 1), got {slope}")
    s = np.asarray(slope, dtype=x.dtype)
    out = np.multiply(x.data, s)
    np.maximum(out, x.data, out=out)

    def bwd(g):
        if not needs[0]:
            return (None,)
        gx = np.multiply(g, s)
        np.copyto(gx, g, where=x.data >= 0)
        return (gx,)

    return out, bwd


@_primitive("sigmoid")
def _sigmoid(ts, attrs, needs):
    (x,) = ts
    t = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + t), t / (1.0 + t)).astype(x.dtype, copy=False)

    def bwd(g):
        return (g * out * (1.0 - out) if needs[0] else None,)

    return out, bwd


@_primitive("tanh")
def _tanh(ts, attrs, needs):
    (x,) = ts
    out = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - out * out) if needs[0] else None,)

    return out, bwd


@_primitive("softmax")
def _softmax(ts, attrs, needs):
    (x,) = ts
    if x.ndim != 2:
        raise ShapeError(f"softmax: need 2-d logits, got {tuple(x.shape)}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        if not needs[0]:
            return (None,)
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return out, bwd


@_primitive("log_softmax")
def _log_softmax(ts, attrs, needs):
    (x,) = ts
    if x.ndim != 2:
        raise ShapeError(f"log_softmax: need 2-d logits, got {tuple(x.shape)}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def bwd(g):
        if not needs[0]:
            return (None,)
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return out, bwd


@_primitive("exp")
def _exp(ts, attrs, needs):
    (x,) = ts
    out = np.exp(x.data)

    def bwd(g):
        return (g * out if needs[0] else None,)

    return out, bwd


@_primitive("log")
def _log(ts, attrs, needs):
    # guarded: log(max(x, EPS)); backward keeps the clamped slope so a
    # saturated discriminator still passes bounded signal
    (x,) = ts
    guarded = np.maximum(x.data, np.asarray(EPS, dtype=x.dtype))
    out = np.log(guarded)

    def bwd(g):
        return (g / guarded if needs[0] else None,)

    return out, bwd


def leaky_relu(x, slope=0.2):
    return apply_primitive("leaky_relu", (x,), slope=slope)


def sigmoid(x):
    return apply_primitive("sigmoid", (x,))


def tanh(x):
    return apply_primitive("tanh", (x,))


def softmax(x):
    return apply_primitive("softmax", (x,))


def log_softmax(x):
    return apply_primitive("log_softmax", (x,))


def exp(x):
    return apply_primitive("exp", (x,))


def log(x):
    return apply_primitive("log", (x,))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


@_primitive("mean")
def _mean(ts, attrs, needs):
    (x,) = ts
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    inv = np.asarray(1.0 / x.size, dtype=x.dtype)

    def bwd(g):
        return (np.full(x.shape, g * inv, dtype=x.dtype) if needs[0] else None,)

    return out, bwd


@_primitive("sum")
def _sum(ts, attrs, needs):
    (x,) = ts
    axis = attrs.get("axis")
    out = np.asarray(x.data.sum(axis=axis), dtype=x.dtype)

    def bwd(g):
        if not needs[0]:
            return (None,)
        if axis is None:
            return (np.full(x.shape, g, dtype=x.dtype),)
        gexp = np.expand_dims(g, axis)
        return (np.broadcast_to(gexp, x.shape).copy(),)

    return out, bwd


@_primitive("reshape")
def _reshape(ts, attrs, needs):
    (x,) = ts
    shape = attrs["shape"]
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {tuple(x.shape)} as {tuple(shape)}")

    def bwd(g):
        return (g.reshape(x.shape) if needs[0] else None,)

    return out, bwd


@_primitive("concat")
def _concat(ts, attrs, needs):
    axis = attrs.get("axis", 0)
    base = list(ts[0].shape)
    for t in ts[1:]:
        s = list(t.shape)
        s[axis] = base[axis]
        if s != base:
            raise ShapeError(
                f"concat: shape {tuple(t.shape)} incompatible with {tuple(ts[0].shape)} on axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(p if needs[i] else None for i, p in enumerate(parts))

    return out, bwd


@_primitive("narrow")
def _narrow(ts, attrs, needs):
    (x,) = ts
    axis, start, length = attrs["axis"], attrs["start"], attrs["length"]
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(
            f"narrow: [{start}:{start + length}] out of range for axis {axis} of {tuple(x.shape)}")
    idx = tuple(slice(None) if d != axis else slice(start, start + length)
                for d in range(x.ndim))
    out = x.data[idx].copy()

    def bwd(g):
        if not needs[0]:
            return (None,)
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return out, bwd


@_primitive("clamp")
def _clamp(ts, attrs, needs):
    (x,) = ts
    lo, hi = attrs["lo"], attrs["hi"]
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def bwd(g):
        return (np.where(inside, g, 0.0).astype(x.dtype, copy=False) if needs[0] else None,)

    return out, bwd


def mean(x):
    return apply_primitive("mean", (x,))


def tsum(x, axis=None):
    return apply_primitive("sum", (x,), axis=axis)


def reshape(x, shape):
    return apply_primitive("reshape", (x,), shape=tuple(shape))


def concat(tensors, axis=0):
    return apply_primitive("concat", tuple(tensors), axis=axis)


def narrow(x, axis, start, length):
    return apply_primitive("narrow", (x,), axis=axis, start=start, length=length)


def clamp(x, lo, hi):
    return apply_primitive("clamp", (x,), lo=lo, hi=hi)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    tol: float
    max_rel_err: float = 0.0
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_err < self.tol

    def __str__(self):
        lines = [f"grad check: max rel err {self.max_rel_err:.3e} "
                 f"({'pass' if self.passed else 'FAIL'} vs tol {self.tol:.1e})"]
        for name, err in self.per_param.items():
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def grad_check(f, params, eps=1e-4, tol=1e-3, max_coords_per_param=None, rng=None,
               names=None):
    """Compare autodiff gradients of scalar f() against central differences.

    f is a zero-argument callable returning a scalar Tensor and closing over
    `params`; it must be deterministic (two evaluations are compared and a
    mismatch is an error).  With max_coords_per_param set, a seeded random
    subset of coordinates is probed per parameter; otherwise every one.
    Relative error uses max(|fd|, |ad|, 1e-6) as the denominator so exactly
    zero gradients pass.
    """
    v1 = f().item()
    v2 = f().item()
    if v1 != v2:
        raise TensorError(f"grad_check: f is not deterministic ({v1!r} != {v2!r})")

    for p in params:
        p.zero_grad()
    with record():
        out = f()
    backward(out)

    if names is None:
        names = [f"param{i}" for i in range(len(params))]
    if rng is None:
        rng = np.random.default_rng(0)

    report = GradCheckReport(tol=tol)
    for name, p in zip(names, params):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        ad = np.zeros(n) if p.grad is None else p.grad.reshape(-1)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * eps)
            a = float(ad[i])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            if err > worst:
                worst = err
        report.per_param[name] = worst
        report.max_rel_err = max(report.max_rel_err, worst)
    return report
