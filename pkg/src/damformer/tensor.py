"""Dense tensors with reverse-mode automatic differentiation.

Every op is a plain function taking and returning :class:`Tensor`. Ops record
their parents and a backward closure on the output; :func:`backward` walks the
resulting graph in reverse topological order.

Only two dtypes exist: float32 (training) and float64 (gradient checking),
selected globally with :func:`set_dtype` or the :func:`precision` context.
Broadcasting is limited to scalars, bias vectors and per-channel gates; every
other binary op requires identical shapes.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ShapeError",
    "ConfigError",
    "NumericalError",
    "set_dtype",
    "get_dtype",
    "precision",
    "no_grad",
    "set_debug",
    "backward",
]

_DTYPES = {"f32": np.float32, "f64": np.float64}
_dtype = np.float32
_grad_enabled = True
_debug = False


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """Op or layer hyperparameters are invalid."""


class NumericalError(FloatingPointError):
    """A NaN or Inf was produced while the debug flag is on."""


def set_dtype(name: str) -> None:
    global _dtype
    if name not in _DTYPES:
        raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}, got {name!r}")
    _dtype = _DTYPES[name]


def get_dtype() -> type:
    return _dtype


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    prev = _dtype
    set_dtype(name)
    try:
        yield
    finally:
        globals()["_dtype"] = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_debug(flag: bool) -> None:
    """Toggle NaN/Inf checking on every op output."""
    global _debug
    _debug = bool(flag)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind in "fiub" and arr.dtype != _dtype:
            arr = arr.astype(_dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    # operator sugar; the functional ops below enforce the shape rules
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite value produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires it.

    Leaf gradients accumulate across calls until reset with ``zero_grad``.
    """
    if root.data.size != 1 or root.ndim != 0:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = _as_tensor(a)
        c = float(b)
        return _make(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")
    a = _as_tensor(a)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = a.data.dtype.type(float(b))
        return _make(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    return _make(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)), "div")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def abs_(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)) evaluated without overflow."""
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.maximum(x, 0) + np.log1p(e)
    sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _make(out, (a,), lambda g: (g * sig,), "softplus")


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    out = (x * cdf).astype(x.dtype)

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return ((g * (cdf + x * pdf)).astype(x.dtype),)

    return _make(out, (a,), bw, "gelu")


# ---------------------------------------------------------------- reductions / shape


def sum_(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    out = np.sum(a.data, axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum_(a, axis), 1.0 / n)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return _make(out, (a,), lambda g: (np.ascontiguousarray(np.transpose(g, inv)),), "transpose")


def concat(items: Sequence[Tensor], axis: int) -> Tensor:
    items = list(items)
    ref = list(items[0].shape)
    for t in items[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(o != r for i, (o, r) in enumerate(zip(other, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: shapes {items[0].shape} and {t.shape} disagree off axis {axis}")
    sizes = [t.shape[axis] for t in items]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in items], axis=axis)
    return _make(out, items, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def take(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather from the flattened tensor; output has ``index``'s shape."""
    index = np.asarray(index, dtype=np.int64)
    shape, size = a.shape, a.data.size

    def bw(g):
        full = np.zeros(size, dtype=g.dtype)
        np.add.at(full, index.ravel(), g.ravel())
        return (full.reshape(shape),)

    return _make(a.data.reshape(-1)[index], (a,), bw, "take")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading (batch) dims must match exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g)

    return _make(np.matmul(ad, bd), (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x[..., K] @ w[K, M] + b[M]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    wd = w.data

    def bw(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(x.shape)
        gw = x2.T @ g2
        return (gx, gw) if b is None else (gx, gw, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out.reshape(*lead, wd.shape[1]), parents, bw, "linear")


def add_bias(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Add a vector along ``axis`` (the only general broadcast allowed)."""
    axis = axis % x.ndim
    if b.shape != (x.shape[axis],):
        raise ShapeError(f"add_bias: bias {b.shape} vs axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    others = tuple(i for i in range(x.ndim) if i != axis)
    return _make(x.data + b.data.reshape(view), (x, b), lambda g: (g, g.sum(axis=others)), "add_bias")


def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """``x[N,C,H,W] * gate[N,C]`` broadcast over the spatial axes."""
    if x.ndim != 4 or gate.shape != x.shape[:2]:
        raise ShapeError(f"scale_channels: gate {gate.shape} vs input {x.shape}")
    xd, gd = x.data, gate.data[:, :, None, None]

    def bw(g):
        return g * gd, (g * xd).sum(axis=(2, 3))

    return _make(xd * gd, (x, gate), bw, "scale_channels")


# ---------------------------------------------------------------- normalisation


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine params {gamma.shape}/{beta.shape} vs channels {c}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = xc * inv
    gd = gamma.data
    lead = tuple(range(xd.ndim - 1))

    def bw(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + beta.data, (x, gamma, beta), bw, "layer_norm")


# ---------------------------------------------------------------- spatial


def conv_output_size(size: int, kernel: int, stride: int, pad: int, exact: bool = True) -> int:
    """Output length; with ``exact=False`` trailing positions that don't fill a stride are dropped."""
    span = size + 2 * pad - kernel
    if span < 0 or (exact and span % stride):
        raise ConfigError(
            f"conv output size (size {size} + 2*{pad} - {kernel})/{stride} + 1 is not a positive integer"
        )
    return span // stride + 1


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
    groups: int = 1,
    exact: bool = True,
) -> Tensor:
    """Grouped 2-D cross-correlation on NCHW input with OIHW weights.

    ``exact`` rejects geometries whose output size is not integral; strided
    patch embeddings pass ``exact=False`` for floor semantics.
    """
    n, c, h, wd_ = x.shape
    o, cg, kh, kw = w.shape
    if c % groups or o % groups or cg != c // groups:
        raise ConfigError(f"conv2d: input channels {c}, weight {w.shape}, groups {groups} inconsistent")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d: bias {b.shape} vs {o} output channels")
    ho = conv_output_size(h, kh, stride, pad, exact)
    wo = conv_output_size(wd_, kw, stride, pad, exact)
    parents = (x, w) if b is None else (x, w, b)

    def with_bias(grads, g):
        return grads if b is None else grads + (g.sum(axis=(0, 2, 3)),)

    if kh == kw == 1 and stride == 1 and pad == 0 and groups == 1:
        return _conv1x1(x, w, b, parents, with_bias)

    xd, wt = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    hs, ws = stride * ho, stride * wo

    def tap(arr, i, j):
        return arr[:, :, i : i + hs : stride, j : j + ws : stride]

    if cg == 1 and o == c:
        # depthwise: one multiply-add per kernel tap
        out = np.zeros((n, o, ho, wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                out += tap(xp, i, j) * wt[None, :, 0, i, j, None, None]
        if b is not None:
            out += b.data[None, :, None, None]

        def bw_dw(g):
            gxp = np.zeros_like(xp)
            gw = np.empty_like(wt)
            for i in range(kh):
                for j in range(kw):
                    tap(gxp, i, j)[...] += g * wt[None, :, 0, i, j, None, None]
                    gw[:, 0, i, j] = (g * tap(xp, i, j)).sum(axis=(0, 2, 3))
            gx = gxp[:, :, pad : pad + h, pad : pad + wd_] if pad else gxp
            return with_bias((np.ascontiguousarray(gx), gw), g)

        return _make(out, parents, bw_dw, "conv2d")

    og = o // groups
    # im2col: [N, groups, Ho*Wo, cg*kh*kw]
    cols = np.empty((n, groups, cg, kh, kw, ho, wo), dtype=xd.dtype)
    xg = xp.reshape(n, groups, cg, *xp.shape[2:])
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j] = xg[:, :, :, i : i + hs : stride, j : j + ws : stride]
    cols = cols.reshape(n, groups, cg * kh * kw, ho * wo).transpose(0, 1, 3, 2)
    wmat = wt.reshape(groups, og, cg * kh * kw).transpose(0, 2, 1)  # g, K, og
    out = np.matmul(cols, wmat[None])  # n, g, HW, og
    out = np.ascontiguousarray(out.transpose(0, 1, 3, 2)).reshape(n, o, ho, wo)
    if b is not None:
        out += b.data[None, :, None, None]

    def bw(g):
        gm = g.reshape(n, groups, og, ho * wo).transpose(0, 1, 3, 2)  # n, g, HW, og
        gw = np.matmul(cols.transpose(0, 1, 3, 2), gm).sum(axis=0)  # g, K, og
        gw = np.ascontiguousarray(gw.transpose(0, 2, 1)).reshape(wt.shape)
        gcols = np.matmul(gm, wmat.transpose(0, 2, 1)[None])  # n, g, HW, K
        gcols = gcols.transpose(0, 1, 3, 2).reshape(n, groups, cg, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        gxg = gxp.reshape(n, groups, cg, *xp.shape[2:])
        for i in range(kh):
            for j in range(kw):
                gxg[:, :, :, i : i + hs : stride, j : j + ws : stride] += gcols[:, :, :, i, j]
        gx = gxp[:, :, pad : pad + h, pad : pad + wd_] if pad else gxp
        return with_bias((np.ascontiguousarray(gx), gw), g)

    return _make(out, parents, bw, "conv2d")


def _conv1x1(x, w, b, parents, with_bias):
    n, c, h, wd_ = x.shape
    o = w.shape[0]
    wm = w.data[:, :, 0, 0]
    xm = x.data.reshape(n, c, h * wd_)
    out = np.matmul(wm[None], xm)
    if b is not None:
        out += b.data[None, :, None]

    def bw(g):
        gm = g.reshape(n, o, h * wd_)
        gx = np.matmul(wm.T[None], gm).reshape(x.shape)
        gw = np.matmul(gm, xm.transpose(0, 2, 1)).sum(axis=0)[:, :, None, None]
        return with_bias((gx, gw), g)

    return _make(out.reshape(n, o, h, wd_), parents, bw, "conv2d")


def interp_matrix(in_size: int, out_size: int, dtype=np.float64) -> np.ndarray:
    """Row i holds the align-corners-false bilinear weights for output index i."""
    m = np.zeros((out_size, in_size), dtype=dtype)
    scale = in_size / out_size
    for i in range(out_size):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), in_size - 1)
        i1 = min(i0 + 1, in_size - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    return m


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    n, c, h, w = x.shape
    if out_h <= 0 or out_w <= 0:
        raise ConfigError(f"bilinear_upsample: target size {out_h}x{out_w} must be positive")
    if out_h < h or out_w < w:
        raise ConfigError(f"bilinear_upsample: target {out_h}x{out_w} smaller than input {h}x{w}")
    if (out_h, out_w) == (h, w):
        return _make(x.data.copy(), (x,), lambda g: (g,), "upsample")
    ah = interp_matrix(h, out_h, x.dtype)
    aw = interp_matrix(w, out_w, x.dtype)
    out = np.einsum("ih,nchw,jw->ncij", ah, x.data, aw, optimize=True)

    def bw(g):
        return (np.einsum("ih,ncij,jw->nchw", ah, g, aw, optimize=True),)

    return _make(np.ascontiguousarray(out), (x,), bw, "upsample")


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C]"""
    n, c, h, w = x.shape
    scale = x.dtype.type(1.0 / (h * w))
    return _make(x.data.mean(axis=(2, 3)), (x,),
                 lambda g: (np.broadcast_to(g[:, :, None, None] * scale, x.shape).copy(),), "avg_pool")


def global_max_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C]; gradient goes to the first maximal element."""
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)

    def bw(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[:, :, None], g[:, :, None], axis=2)
        return (gx.reshape(x.shape),)

    return _make(np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0], (x,), bw, "max_pool")


def leaves(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad and t._backward is None]
