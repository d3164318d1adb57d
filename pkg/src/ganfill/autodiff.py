"""Reverse-mode automatic differentiation on dense float64 arrays.

A Tensor wraps a numpy array. While a Graph is active (entered as a
context manager) every operation appends a node to that tape, and
backward() sweeps the tape in reverse. Each node's backward rule is
itself written in terms of tape operations, so backward(create_graph=True)
records the gradient computation too. That is what makes a loss built
from a gradient norm differentiable a second time.

Broadcasting is deliberately restricted: elementwise operations accept
equal shapes, or a scalar (size-1 tensor) against anything. Explicit
broadcast_to() covers the rest, which keeps shape bugs loud.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class GraphError(RuntimeError):
    """A tensor was used with a graph it does not belong to."""


class NumericError(RuntimeError):
    """A training loop produced a non-finite loss."""


_STACK: list = []


def _active():
    return _STACK[-1] if _STACK else None


class Graph:
    """Append-only op tape; a node's inputs always precede it."""

    __slots__ = ("_ops",)

    def __init__(self):
        self._ops = []

    def __len__(self):
        return len(self._ops)

    def __enter__(self):
        _STACK.append(self)
        return self

    def __exit__(self, *exc):
        _STACK.pop()
        return False

    def _add(self, op, inputs, vjp):
        self._ops.append((op, inputs, vjp))
        return len(self._ops) - 1


class pause:
    """Context manager that suspends recording while a graph is active."""

    def __enter__(self):
        _STACK.append(None)
        return self

    def __exit__(self, *exc):
        _STACK.pop()
        return False


class Tensor:
    """Dense float64 array, optionally a node of the ambient graph.

    Tensors hash by identity; gradient maps returned by backward() are
    keyed on the tensor objects passed as wrt.
    """

    __slots__ = ("data", "_graph", "_node")

    def __init__(self, data):
        # asarray keeps float64 ndarrays intact, so parameter tensors still
        # alias the caller's buffer for in-place updates
        self.data = np.asarray(data, dtype=np.float64)
        self._graph = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a size-1 tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, no graph history; shares storage."""
        return Tensor(self.data)

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return reduce_mean(self)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)})"

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

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

    def __matmul__(self, other):
        return matmul(self, other)


# ---------------------------------------------------------------- creation

def _check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ValueError(f"tensor extents must be >= 1, got {shape}")
    return shape


def _register(t: Tensor) -> Tensor:
    g = _active()
    if g is not None:
        t._graph = g
        t._node = g._add("leaf", (), None)
    return t


def tensor(data, shape=None) -> Tensor:
    """Tensor from array-like data, optionally reshaped."""
    arr = np.array(data, dtype=np.float64, order="C")
    if shape is not None:
        shape = _check_shape(shape)
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"data of size {arr.size} does not fill shape {shape}")
        arr = arr.reshape(shape)
    return _register(Tensor(arr))


def zeros(shape) -> Tensor:
    return _register(Tensor(np.zeros(_check_shape(shape))))


def ones(shape) -> Tensor:
    return _register(Tensor(np.ones(_check_shape(shape))))


def full(shape, value: float) -> Tensor:
    return _register(Tensor(np.full(_check_shape(shape), float(value))))


def sample(rng, kind: str, shape) -> Tensor:
    """Tensor filled from the rng stream, row-major draw order."""
    if kind == "uniform01":
        data = rng.uniform_array(shape)
    elif kind == "standard_normal":
        data = rng.normal_array(shape)
    else:
        raise ValueError(f"unknown sample kind {kind!r}")
    return _register(Tensor(data))


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(np.asarray(float(x)))
    if isinstance(x, np.ndarray):
        return Tensor(np.asarray(x, dtype=np.float64))
    raise TypeError(f"cannot use {type(x).__name__} as a tensor")


# ---------------------------------------------------------------- recording

def _node_in(g: Graph, t: Tensor) -> int:
    # Tensors migrate between tapes: anything built elsewhere re-enters the
    # active graph as a leaf the first time it is used here.
    if t._graph is not g or t._node is None:
        t._graph = g
        t._node = g._add("leaf", (), None)
    return t._node


def _apply(op: str, data: np.ndarray, inputs: tuple, vjp_factory) -> Tensor:
    out = Tensor(data)
    g = _active()
    if g is not None:
        ids = tuple(_node_in(g, t) for t in inputs)
        out._graph = g
        out._node = g._add(op, ids, vjp_factory(out))
    return out


# -------------------------------------------------------------- elementwise

def _binary_check(a: Tensor, b: Tensor):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ValueError(
        f"elementwise shapes {tuple(a.shape)} and {tuple(b.shape)} do not match "
        "(only scalar-vs-tensor broadcast is allowed)"
    )


def _unbroadcast(g: Tensor, shape) -> Tensor:
    """Collapse an upstream gradient back to a size-1 operand's shape."""
    if tuple(g.shape) == tuple(shape):
        return g
    s = reduce_sum(g)
    return s if shape == () else reshape(s, shape)


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_check(a, b)

    def factory(out):
        def vjp(g, need):
            return (
                _unbroadcast(g, a.shape) if need[0] else None,
                _unbroadcast(g, b.shape) if need[1] else None,
            )
        return vjp

    return _apply("add", a.data + b.data, (a, b), factory)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_check(a, b)

    def factory(out):
        def vjp(g, need):
            return (
                _unbroadcast(g, a.shape) if need[0] else None,
                _unbroadcast(neg(g), b.shape) if need[1] else None,
            )
        return vjp

    return _apply("sub", a.data - b.data, (a, b), factory)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_check(a, b)

    def factory(out):
        def vjp(g, need):
            return (
                _unbroadcast(mul(g, b), a.shape) if need[0] else None,
                _unbroadcast(mul(g, a), b.shape) if need[1] else None,
            )
        return vjp

    return _apply("mul", a.data * b.data, (a, b), factory)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_check(a, b)

    def factory(out):
        def vjp(g, need):
            da = _unbroadcast(div(g, b), a.shape) if need[0] else None
            db = None
            if need[1]:
                db = _unbroadcast(neg(div(mul(g, a), square(b))), b.shape)
            return da, db
        return vjp

    return _apply("div", a.data / b.data, (a, b), factory)


def neg(a) -> Tensor:
    a = _lift(a)

    def factory(out):
        def vjp(g, need):
            return (neg(g) if need[0] else None,)
        return vjp

    return _apply("neg", -a.data, (a,), factory)


def log(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log requires strictly positive input")

    def factory(out):
        def vjp(g, need):
            return (div(g, a) if need[0] else None,)
        return vjp

    return _apply("log", np.log(a.data), (a,), factory)


def exp(a) -> Tensor:
    a = _lift(a)

    def factory(out):
        def vjp(g, need):
            return (mul(g, out) if need[0] else None,)
        return vjp

    return _apply("exp", np.exp(a.data), (a,), factory)


def sqrt(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt requires non-negative input")

    def factory(out):
        def vjp(g, need):
            return (div(mul(g, 0.5), out) if need[0] else None,)
        return vjp

    return _apply("sqrt", np.sqrt(a.data), (a,), factory)


def square(a) -> Tensor:
    a = _lift(a)

    def factory(out):
        def vjp(g, need):
            return (mul(mul(g, a), 2.0) if need[0] else None,)
        return vjp

    return _apply("square", a.data * a.data, (a,), factory)


def absolute(a) -> Tensor:
    a = _lift(a)
    sign = Tensor(np.sign(a.data))

    def factory(out):
        def vjp(g, need):
            # sign is held constant, so the second derivative is exactly zero
            return (mul(g, sign) if need[0] else None,)
        return vjp

    return _apply("abs", np.abs(a.data), (a,), factory)


def relu(a) -> Tensor:
    a = _lift(a)
    gate = Tensor((a.data > 0.0).astype(np.float64))

    def factory(out):
        def vjp(g, need):
            # relu'(0) = 0 by convention; gate is constant under differentiation
            return (mul(g, gate) if need[0] else None,)
        return vjp

    return _apply("relu", np.maximum(a.data, 0.0), (a,), factory)


def sigmoid(a) -> Tensor:
    a = _lift(a)
    x = a.data
    data = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def factory(out):
        def vjp(g, need):
            if not need[0]:
                return (None,)
            return (mul(mul(g, out), sub(1.0, out)),)
        return vjp

    return _apply("sigmoid", data, (a,), factory)


def tanh(a) -> Tensor:
    a = _lift(a)

    def factory(out):
        def vjp(g, need):
            if not need[0]:
                return (None,)
            return (mul(g, sub(1.0, square(out))),)
        return vjp

    return _apply("tanh", np.tanh(a.data), (a,), factory)


_UNARY = {
    "neg": neg, "log": log, "exp": exp, "sqrt": sqrt, "square": square,
    "abs": absolute, "relu": relu, "sigmoid": sigmoid, "tanh": tanh,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name."""
    if kind in _UNARY:
        if b is not None:
            raise ValueError(f"{kind} takes a single operand")
        return _UNARY[kind](a)
    if kind in _BINARY:
        if b is None:
            raise ValueError(f"{kind} takes two operands")
        return _BINARY[kind](a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ------------------------------------------------------------ shape algebra

def reshape(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    if a.size != (int(np.prod(shape)) if shape else 1):
        raise ValueError(f"cannot reshape {tuple(a.shape)} to {shape}")

    def factory(out):
        def vjp(g, need):
            return (reshape(g, a.shape) if need[0] else None,)
        return vjp

    # ascontiguousarray promotes 0-d to 1-d, so only apply it off the 0-d path
    data = a.data.reshape(shape)
    if data.ndim:
        data = np.ascontiguousarray(data)
    return _apply("reshape", data, (a,), factory)


def permute(a, axes) -> Tensor:
    a = _lift(a)
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ValueError(f"axes {axes} are not a permutation of {a.ndim} dims")
    inverse = tuple(int(np.argsort(axes)[i]) for i in range(len(axes)))

    def factory(out):
        def vjp(g, need):
            return (permute(g, inverse) if need[0] else None,)
        return vjp

    return _apply("permute", np.ascontiguousarray(a.data.transpose(axes)), (a,), factory)


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.ndim != 2:
        raise ValueError("transpose expects a matrix")
    return permute(a, (1, 0))


def broadcast_to(a, shape) -> Tensor:
    """Explicitly expand size-1 axes; the adjoint sums them back."""
    a = _lift(a)
    shape = _check_shape(shape)
    src = a
    if a.ndim != len(shape):
        if a.size == 1:
            src = reshape(a, (1,) * len(shape))
        else:
            raise ValueError(f"broadcast_to needs matching rank: {tuple(a.shape)} -> {shape}")
    expanded = tuple(
        i for i in range(len(shape)) if src.shape[i] == 1 and shape[i] != 1
    )
    for i in range(len(shape)):
        if src.shape[i] not in (1, shape[i]):
            raise ValueError(f"cannot broadcast {tuple(src.shape)} to {shape}")

    def factory(out):
        def vjp(g, need):
            if not need[0]:
                return (None,)
            r = reduce_sum(g, axes=expanded, keepdims=True) if expanded else g
            return (reshape(r, a.shape),)
        return vjp

    data = np.broadcast_to(src.data, shape)
    if data.ndim:
        data = np.ascontiguousarray(data)
    else:
        data = data.copy()  # broadcast views are read-only
    return _apply("broadcast", data, (src,), factory)


# --------------------------------------------------------------- reductions

def _norm_axes(a, axes):
    if axes is None:
        return tuple(range(a.ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    return tuple(sorted(int(x) % a.ndim for x in axes))


def _keepdims_shape(a, axes):
    return tuple(1 if i in axes else s for i, s in enumerate(a.shape))


def reduce_sum(a, axes=None, keepdims=False) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(a, axes)
    data = np.sum(a.data, axis=axes if axes else None, keepdims=keepdims)
    kshape = _keepdims_shape(a, axes)

    def factory(out):
        def vjp(g, need):
            if not need[0]:
                return (None,)
            return (broadcast_to(reshape(g, kshape), a.shape),)
        return vjp

    return _apply("sum", np.asarray(data), (a,), factory)


def reduce_mean(a, axes=None, keepdims=False) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(a, axes)
    count = 1
    for i in axes:
        count *= a.shape[i]
    data = np.mean(a.data, axis=axes if axes else None, keepdims=keepdims)
    kshape = _keepdims_shape(a, axes)

    def factory(out):
        def vjp(g, need):
            if not need[0]:
                return (None,)
            return (mul(broadcast_to(reshape(g, kshape), a.shape), 1.0 / count),)
        return vjp

    return _apply("mean", np.asarray(data), (a,), factory)


def norm(a, p: int = 2) -> Tensor:
    """Entrywise l1 or l2 norm, reduced over all axes."""
    if p == 1:
        return reduce_sum(absolute(a))
    if p == 2:
        return sqrt(reduce_sum(square(a)))
    raise ValueError("norm supports p in {1, 2}")


# ------------------------------------------------------------------ matmul

def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects matrices")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dims differ: {tuple(a.shape)} @ {tuple(b.shape)}")

    def factory(out):
        def vjp(g, need):
            return (
                matmul(g, transpose(b)) if need[0] else None,
                matmul(transpose(a), g) if need[1] else None,
            )
        return vjp

    return _apply("matmul", a.data @ b.data, (a, b), factory)


# ------------------------------------------------------------- convolution
#
# conv2d, its input gradient and its kernel gradient form a closed triad:
# each one's backward rule is built from the other two, so any order of
# differentiation stays on the tape.

def _conv_geometry(xs, ks, stride, pad):
    n, c, h, w = xs
    o, ck, kh, kw = ks
    if ck != c:
        raise ValueError(f"kernel channels {ck} do not match input channels {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d kernels must have odd extents")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d needs stride >= 1 and pad >= 0")
    for dim, k in ((h, kh), (w, kw)):
        if (dim + 2 * pad - k) % stride != 0:
            raise ValueError("conv2d output extent is not integral for this geometry")
        if (dim + 2 * pad - k) // stride + 1 < 1:
            raise ValueError("conv2d output extent would be empty")
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def _cols(x, kh, kw, stride, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, hq, wq = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * hq * wq, c * kh * kw)
    return cols, hq, wq


def _conv_val(x, k, stride, pad):
    o = k.shape[0]
    cols, hq, wq = _cols(x, k.shape[2], k.shape[3], stride, pad)
    out = cols @ k.reshape(o, -1).T
    return np.ascontiguousarray(
        out.reshape(x.shape[0], hq, wq, o).transpose(0, 3, 1, 2)
    )


def _conv_kgrad_val(x, g, stride, pad, kshape):
    o, c, kh, kw = kshape
    cols, hq, wq = _cols(x, kh, kw, stride, pad)
    gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
    return (gm.T @ cols).reshape(kshape)


def _conv_igrad_val(g, k, stride, pad, xshape):
    n, c, h, w = xshape
    o, _, kh, kw = k.shape
    hq, wq = g.shape[2], g.shape[3]
    t = g.transpose(0, 2, 3, 1).reshape(-1, o) @ k.reshape(o, -1)
    t = t.reshape(n, hq, wq, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * hq:stride, j:j + stride * wq:stride] += (
                t[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if pad == 0:
        return dxp
    return np.ascontiguousarray(dxp[:, :, pad:pad + h, pad:pad + w])


def _conv4(x: Tensor, k: Tensor, stride: int, pad: int) -> Tensor:
    _conv_geometry(x.shape, k.shape, stride, pad)

    def factory(out):
        def vjp(g, need):
            dx = _conv_igrad(g, k, stride, pad, x.shape) if need[0] else None
            dk = _conv_kgrad(x, g, stride, pad, k.shape) if need[1] else None
            return dx, dk
        return vjp

    return _apply("conv2d", _conv_val(x.data, k.data, stride, pad), (x, k), factory)


def _conv_igrad(g: Tensor, k: Tensor, stride: int, pad: int, xshape) -> Tensor:
    def factory(out):
        def vjp(u, need):
            dg = _conv4(u, k, stride, pad) if need[0] else None
            dk = _conv_kgrad(u, g, stride, pad, k.shape) if need[1] else None
            return dg, dk
        return vjp

    return _apply(
        "conv2d.igrad", _conv_igrad_val(g.data, k.data, stride, pad, xshape), (g, k), factory
    )


def _conv_kgrad(x: Tensor, g: Tensor, stride: int, pad: int, kshape) -> Tensor:
    def factory(out):
        def vjp(u, need):
            dx = _conv_igrad(g, u, stride, pad, x.shape) if need[0] else None
            dg = _conv4(x, u, stride, pad) if need[1] else None
            return dx, dg
        return vjp

    return _apply(
        "conv2d.kgrad", _conv_kgrad_val(x.data, g.data, stride, pad, kshape), (x, g), factory
    )


def conv2d(x, kernels, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding; accepts [c,h,w] or [n,c,h,w]."""
    x, kernels = _lift(x), _lift(kernels)
    if kernels.ndim != 4:
        raise ValueError("kernels must be [out_ch, in_ch, kh, kw]")
    if x.ndim == 3:
        return reshape(
            _conv4(reshape(x, (1,) + tuple(x.shape)), kernels, stride, pad),
            _conv_out_shape(x.shape, kernels.shape, stride, pad),
        )
    if x.ndim == 4:
        return _conv4(x, kernels, stride, pad)
    raise ValueError("conv2d input must be [c,h,w] or [n,c,h,w]")


def _conv_out_shape(xs, ks, stride, pad):
    hq, wq = _conv_geometry((1,) + tuple(xs), ks, stride, pad)
    return (ks[0], hq, wq)


# --------------------------------------------------------------- resampling

def upsample2(a) -> Tensor:
    """Nearest-neighbour 2x upsampling on [n,c,h,w]."""
    a = _lift(a)
    if a.ndim != 4:
        raise ValueError("upsample2 expects [n,c,h,w]")

    def factory(out):
        def vjp(g, need):
            return (sumpool2(g) if need[0] else None,)
        return vjp

    data = a.data.repeat(2, axis=2).repeat(2, axis=3)
    return _apply("upsample2", data, (a,), factory)


def sumpool2(a) -> Tensor:
    """2x2 sum pooling on [n,c,h,w]; adjoint of upsample2."""
    a = _lift(a)
    if a.ndim != 4:
        raise ValueError("sumpool2 expects [n,c,h,w]")
    if a.shape[2] % 2 or a.shape[3] % 2:
        raise ValueError("sumpool2 needs even spatial extents")

    def factory(out):
        def vjp(g, need):
            return (upsample2(g) if need[0] else None,)
        return vjp

    d = a.data
    data = d[:, :, 0::2, 0::2] + d[:, :, 1::2, 0::2] + d[:, :, 0::2, 1::2] + d[:, :, 1::2, 1::2]
    return _apply("sumpool2", data, (a,), factory)


# ---------------------------------------------------------------- backward

def backward(loss: Tensor, wrt, create_graph: bool = False) -> dict:
    """Gradients of a scalar loss with respect to each tensor in wrt.

    With create_graph=True the returned gradients are recorded on the same
    graph and can be differentiated again. Tensors in wrt that the loss
    does not depend on get zero gradients.
    """
    if loss._graph is None or loss._node is None:
        raise GraphError("loss was not recorded on any graph")
    if loss.size != 1:
        raise ValueError("backward needs a scalar loss")
    g = loss._graph
    wrt = list(wrt)
    for t in wrt:
        if t._graph is not g or t._node is None:
            raise GraphError("a wrt tensor is not part of the loss graph")

    ops = g._ops
    limit = loss._node
    want = {t._node for t in wrt}

    # forward reachability: a node needs a gradient iff a wrt tensor feeds it
    needed = bytearray(limit + 1)
    for t in wrt:
        if t._node <= limit:
            needed[t._node] = 1
    for nid in range(limit + 1):
        if needed[nid]:
            continue
        _, inputs, _ = ops[nid]
        for i in inputs:
            if needed[i]:
                needed[nid] = 1
                break

    grads: dict = {}
    found: dict = {}
    ctx = g if create_graph else pause()
    with ctx:
        if needed[limit]:
            grads[limit] = Tensor(np.ones_like(loss.data))
        for nid in range(limit, -1, -1):
            gt = grads.pop(nid, None)
            if gt is None:
                continue
            if nid in want:
                found[nid] = gt
            _, inputs, vjp = ops[nid]
            if vjp is None:
                continue
            need = tuple(bool(needed[i]) for i in inputs)
            if not any(need):
                continue
            for iid, ig in zip(inputs, vjp(gt, need)):
                if ig is None or not needed[iid]:
                    continue
                prev = grads.get(iid)
                grads[iid] = ig if prev is None else add(prev, ig)

    out = {}
    for t in wrt:
        got = found.get(t._node)
        out[t] = got if got is not None else Tensor(np.zeros_like(t.data))
    return out
