"""Minimal reverse-mode autodiff on numpy arrays.

A ``Tensor`` wraps an f32 or f64 ndarray. Operations executed inside a
``with Tape():`` block are recorded as nodes; ``Tensor.backward()`` walks the
recorded nodes in reverse creation order (a valid reverse topological order,
since every node's inputs exist before its output) and accumulates gradients
into ``.grad``. Outside a tape, ops are plain numpy forward evaluation.

f32 is the training dtype; f64 exists so gradients can be checked against
central finite differences at tight tolerances. Everything is single-threaded
and deterministic: same inputs, same bits.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "TapeError",
    "add",
    "sub",
    "mul",
    "square",
    "sigmoid",
    "leaky_relu",
    "abs_mean",
    "reduce_mean",
    "reduce_sum",
    "reshape",
    "transpose",
    "matmul",
    "concat_channels",
    "slice_channels",
    "softmax",
    "linear",
    "conv2d",
    "avg_pool2x2",
    "bilinear_resize",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes (or dtypes/channels) are incompatible."""


class TapeError(RuntimeError):
    """Raised on misuse of the recording tape (e.g. backward twice)."""


class Node:
    """One recorded operation: op kind, input tensors, and its adjoint."""

    __slots__ = ("op", "inputs", "out", "backward")

    def __init__(self, op, inputs, out, backward):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward = backward


_ACTIVE_TAPE = None


class Tape:
    """Ordered node list for one forward graph; backward may run once.

    Used as a context manager. Nesting replaces the active tape for the
    duration of the inner block.
    """

    def __init__(self):
        self.nodes = []
        self.backward_done = False
        self._outer = None

    def __enter__(self):
        global _ACTIVE_TAPE
        self._outer = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._outer
        self._outer = None
        return False

    def record(self, op, inputs, out, backward):
        out.tape = self
        out.tape_id = len(self.nodes)
        self.nodes.append(Node(op, inputs, out, backward))

    def op_counts(self):
        """Histogram of recorded op kinds (handy for graph-shape tests)."""
        counts = {}
        for node in self.nodes:
            counts[node.op] = counts.get(node.op, 0) + 1
        return counts


def active_tape():
    return _ACTIVE_TAPE


class Tensor:
    """n-d array participating in the autodiff graph.

    ``data`` is an f32 or f64 ndarray. ``grad`` is allocated lazily during
    backward and has the same shape. Once a tensor is recorded as an op
    output its buffer is frozen (functional graph semantics); leaves stay
    writable so the optimizer can rebind them between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape", "tape_id")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.tape = None
        self.tape_id = None

    # -- introspection ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"

    # -- graph participation ----------------------------------------------
    def _tracked(self):
        return self.requires_grad or self.tape_id is not None

    def detach(self):
        """Same values, severed from the graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + np.asarray(g, dtype=self.data.dtype)

    def backward(self):
        """Reverse sweep from this scalar; returns {leaf: grad array}.

        Walks the tape strictly in reverse recording order, which is a
        reverse topological order of the graph. A tape supports exactly one
        backward call; build a fresh graph (new ``Tape``) for the next step.
        """
        if self.data.size != 1:
            raise TapeError(
                f"backward requires a scalar loss, got shape {tuple(self.shape)}"
            )
        if self.tape is None:
            raise TapeError("tensor was not recorded on a tape; wrap the forward pass in `with Tape():`")
        if self.tape.backward_done:
            raise TapeError("backward already ran on this tape; record a new graph first")
        self.tape.backward_done = True

        self.grad = np.ones_like(self.data)
        leaf_grads = {}
        for node in reversed(self.tape.nodes[: self.tape_id + 1]):
            g_out = node.out.grad
            if g_out is None:
                continue
            grads = node.backward(g_out)
            for inp, g in zip(node.inputs, grads):
                if g is None or not isinstance(inp, Tensor) or not inp._tracked():
                    continue
                inp._accumulate(g)
                if inp.requires_grad and inp.tape_id is None:
                    leaf_grads[id(inp)] = inp
        return {t: t.grad for t in leaf_grads.values()}

    # -- operator sugar -----------------------------------------------------
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

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# op plumbing
# ---------------------------------------------------------------------------


def _as_operand(x, dtype):
    """Lift python scalars to ndarrays; pass Tensors through."""
    if isinstance(x, Tensor):
        return x
    return np.asarray(x, dtype=dtype)


def _value(x):
    return x.data if isinstance(x, Tensor) else x

def _common_dtype(*operands):
    dtypes = {x.data.dtype for x in operands if isinstance(x, Tensor)}
    if len(dtypes) > 1:
        raise ShapeError(f"mixed tensor dtypes in one op: {sorted(d.name for d in dtypes)}")
    return dtypes.pop() if dtypes else np.dtype(np.float32)


def _record(op, inputs, out_data, backward):
    """Wrap ``out_data`` in a Tensor, recording a node when a tape is live."""
    out = Tensor(out_data)
    tape = _ACTIVE_TAPE
    if tape is not None and any(
        isinstance(i, Tensor) and i._tracked() for i in inputs
    ):
        out.data.flags.writeable = False
        tape.record(op, tuple(inputs), out, backward)
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise suite
# ---------------------------------------------------------------------------


def add(a, b):
    dt = _common_dtype(*[x for x in (a, b) if isinstance(x, Tensor)])
    a, b = _as_operand(a, dt), _as_operand(b, dt)
    out = _value(a) + _value(b)

    def backward(g):
        return (
            _unbroadcast(g, a.shape) if isinstance(a, Tensor) else None,
            _unbroadcast(g, b.shape) if isinstance(b, Tensor) else None,
        )

    return _record("add", (a, b), out, backward)


def sub(a, b):
    dt = _common_dtype(*[x for x in (a, b) if isinstance(x, Tensor)])
    a, b = _as_operand(a, dt), _as_operand(b, dt)
    out = _value(a) - _value(b)

    def backward(g):
        return (
            _unbroadcast(g, a.shape) if isinstance(a, Tensor) else None,
            _unbroadcast(-g, b.shape) if isinstance(b, Tensor) else None,
        )

    return _record("sub", (a, b), out, backward)


def mul(a, b):
    dt = _common_dtype(*[x for x in (a, b) if isinstance(x, Tensor)])
    a, b = _as_operand(a, dt), _as_operand(b, dt)
    av, bv = _value(a), _value(b)
    out = av * bv

    def backward(g):
        return (
            _unbroadcast(g * bv, a.shape) if isinstance(a, Tensor) else None,
            _unbroadcast(g * av, b.shape) if isinstance(b, Tensor) else None,
        )

    return _record("mul", (a, b), out, backward)


def square(x):
    xv = x.data
    return _record("square", (x,), xv * xv, lambda g: (2.0 * xv * g,))


def sigmoid(x):
    xv = x.data
    # split on sign to avoid exp overflow
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", (x,), out, backward)


def leaky_relu(x, slope=0.2):
    xv = x.data
    out = np.where(xv >= 0, xv, slope * xv)

    def backward(g):
        return (np.where(xv >= 0, g, slope * g),)

    return _record("leaky_relu", (x,), out, backward)


def abs_mean(x):
    """Scalar mean of |x| (the L1 building block)."""
    xv = x.data
    out = np.abs(xv).mean()

    def backward(g):
        return (g * np.sign(xv) / xv.size,)

    return _record("abs_mean", (x,), np.asarray(out, dtype=xv.dtype), backward)


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_mean(x, axis=None, keepdims=False):
    axes = _axis_tuple(axis, x.data.ndim)
    out = x.data.mean(axis=axes, keepdims=keepdims)
    count = 1
    for a in axes:
        count *= x.data.shape[a]

    def backward(g):
        gg = np.asarray(g)
        if not keepdims:
            gg = np.expand_dims(gg, axes)
        return (np.broadcast_to(gg, x.shape) / count,)

    return _record("reduce_mean", (x,), np.asarray(out, dtype=x.dtype), backward)


def reduce_sum(x, axis=None, keepdims=False):
    axes = _axis_tuple(axis, x.data.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = np.asarray(g)
        if not keepdims:
            gg = np.expand_dims(gg, axes)
        return (np.broadcast_to(gg, x.shape).astype(x.dtype, copy=True),)

    return _record("reduce_sum", (x,), np.asarray(out, dtype=x.dtype), backward)


def reshape(x, shape):
    old = x.shape
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(old),)

    return _record("reshape", (x,), out, backward)


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)

    def backward(g):
        return (g.transpose(inv),)

    return _record("transpose", (x,), out, backward)


def matmul(a, b):
    """numpy matmul semantics on the last two axes, batched over the rest."""
    _common_dtype(a, b)
    av, bv = a.data, b.data
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {av.shape} @ {bv.shape}")
    out = np.matmul(av, bv)

    def backward(g):
        ga = np.matmul(g, bv.swapaxes(-1, -2))
        gb = np.matmul(av.swapaxes(-1, -2), g)
        return (_unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape))

    return _record("matmul", (a, b), out, backward)


def concat_channels(tensors):
    """Concatenate along axis 1; all other dims must match."""
    tensors = list(tensors)
    _common_dtype(*tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        s = t.shape
        if len(s) != len(ref) or s[0] != ref[0] or s[2:] != ref[2:]:
            raise ShapeError(f"concat_channels dims differ outside axis 1: {ref} vs {s}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    sizes = [t.shape[1] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            g[:, offsets[i] : offsets[i + 1]] for i in range(len(tensors))
        )

    return _record("concat_channels", tuple(tensors), out, backward)


def slice_channels(x, start, stop):
    """View of channels [start, stop) along axis 1."""
    out = x.data[:, start:stop]
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return _record("slice_channels", (x,), out, backward)


def softmax(x, axis):
    """Stable exp-normalize along ``axis``; slices sum to 1."""
    axis = axis % x.data.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _record("softmax", (x,), out, backward)


# ---------------------------------------------------------------------------
# linear / conv / resize
# ---------------------------------------------------------------------------


def linear(x, weight, bias):
    """Affine map over the last axis: y[..., o] = sum_i x[..., i] w[o, i] + b[o]."""
    _common_dtype(x, weight, bias)
    xv, wv, bv = x.data, weight.data, bias.data
    if xv.shape[-1] != wv.shape[1]:
        raise ShapeError(
            f"linear: input last dim {xv.shape[-1]} != weight in-dim {wv.shape[1]} (weight {wv.shape})"
        )
    lead = xv.shape[:-1]
    x2 = xv.reshape(-1, xv.shape[-1])
    out = (x2 @ wv.T + bv).reshape(*lead, wv.shape[0])

    def backward(g):
        g2 = g.reshape(-1, wv.shape[0])
        gx = (g2 @ wv).reshape(xv.shape)
        gw = g2.T @ x2
        gb = g2.sum(axis=0)
        return (gx, gw, gb)

    return _record("linear", (x, weight, bias), out, backward)


def conv2d(x, weight, bias, stride=1, padding=0):
    """2-d cross-correlation, zero padded, via im2col + BLAS matmul.

    x [N,Cin,H,W], weight [Cout,Cin,kh,kw] (kh, kw odd), bias [Cout].
    Output H' = (H + 2 pad - kh)//stride + 1 and likewise W'.
    """
    _common_dtype(x, weight, bias)
    xv, wv, bv = x.data, weight.data, bias.data
    if xv.ndim != 4 or wv.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input/weight, got {xv.shape} / {wv.shape}")
    n, cin, h, w = xv.shape
    cout, cin_w, kh, kw = wv.shape
    if cin != cin_w:
        raise ShapeError(
            f"conv2d channel mismatch: input {xv.shape} has Cin={cin}, weight {wv.shape} expects Cin={cin_w}"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {xv.shape}, kernel {kh}x{kw}")

    xp = np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, cin * kh * kw
    )
    wmat = wv.reshape(cout, -1)
    out = (cols @ wmat.T + bv).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gw = (gmat.T @ cols).reshape(wv.shape)
        gb = gmat.sum(axis=0)
        dcols = gmat @ wmat
        dwin = dcols.reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dwin[
                    :, :, i, j
                ]
        gx = dxp[:, :, padding : padding + h, padding : padding + w]
        return (np.ascontiguousarray(gx), gw, gb)

    return _record("conv2d", (x, weight, bias), out, backward)


def avg_pool2x2(x):
    """2x2 average pool, stride 2; odd trailing row/col is dropped."""
    xv = x.data
    n, c, h, w = xv.shape
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise ShapeError(f"avg_pool2x2 needs spatial dims >= 2, got {xv.shape}")
    xt = xv[:, :, : 2 * ho, : 2 * wo]
    out = 0.25 * (
        xt[:, :, 0::2, 0::2] + xt[:, :, 0::2, 1::2] + xt[:, :, 1::2, 0::2] + xt[:, :, 1::2, 1::2]
    )

    def backward(g):
        gx = np.zeros_like(xv)
        q = 0.25 * g
        gx[:, :, 0 : 2 * ho : 2, 0 : 2 * wo : 2] += q
        gx[:, :, 0 : 2 * ho : 2, 1 : 2 * wo : 2] += q
        gx[:, :, 1 : 2 * ho : 2, 0 : 2 * wo : 2] += q
        gx[:, :, 1 : 2 * ho : 2, 1 : 2 * wo : 2] += q
        return (gx,)

    return _record("avg_pool2x2", (x,), out, backward)


def _resize_matrix(n_in, n_out, dtype):
    """Row-stochastic [n_out, n_in] corner-aligned bilinear sampling matrix.

    Output sample i reads source coordinate i*(n_in-1)/(n_out-1). The
    degenerate cases (n_out == 1 or n_in == 1) pin the sample to coordinate
    0, the top/left corner.
    """
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_out == 1 or n_in == 1:
        m[:, 0] = 1.0
        return m
    scale = (n_in - 1) / (n_out - 1)
    for i in range(n_out):
        src = i * scale
        lo = int(np.floor(src))
        lo = min(lo, n_in - 2)
        frac = src - lo
        m[i, lo] = 1.0 - frac
        m[i, lo + 1] += frac
    return m


def bilinear_resize(x, out_h, out_w):
    """Corner-aligned bilinear resize of [N,C,H,W] to [N,C,out_h,out_w].

    Input corners map exactly onto output corners; equal sizes reproduce the
    input bit for bit.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize target must be >= 1, got {out_h}x{out_w}")
    xv = x.data
    n, c, h, w = xv.shape
    mh = _resize_matrix(h, out_h, xv.dtype)
    mw = _resize_matrix(w, out_w, xv.dtype)
    out = np.matmul(np.matmul(mh, xv), mw.T)

    def backward(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return _record("bilinear_resize", (x,), out, backward)
