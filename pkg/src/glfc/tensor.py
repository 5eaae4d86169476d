"""Dense tensors with reverse-mode automatic differentiation.

Every op builds a node holding its output array, its parent tensors and a
closure mapping the output adjoint to one adjoint per parent. ``backward``
sweeps the graph in reverse topological order and accumulates into the
``.grad`` buffers of leaf tensors that require gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError

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


class Tensor:
    """A numpy array that remembers how it was computed."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def backward(self) -> None:
        backward(self)


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_op(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op.

    ``grad_fn(g)`` receives the output adjoint and must return one array (or
    None) per parent, each shaped like that parent.
    """
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = grad_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- backward sweep -------------------------------------------------------

def _topo_order(root: Tensor) -> list:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Gradients accumulate across calls; zero them between optimizer steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
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


# -- elementwise ----------------------------------------------------------

def add(x, y) -> Tensor:
    x = _lift(x, getattr(y, "dtype", None))
    y = _lift(y, x.dtype)
    _broadcast_shape(x, y)
    return make_op(x.data + y.data, (x, y),
                   lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)))


def sub(x, y) -> Tensor:
    x = _lift(x, getattr(y, "dtype", None))
    y = _lift(y, x.dtype)
    _broadcast_shape(x, y)
    return make_op(x.data - y.data, (x, y),
                   lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)))


def mul(x, y) -> Tensor:
    x = _lift(x, getattr(y, "dtype", None))
    y = _lift(y, x.dtype)
    _broadcast_shape(x, y)
    return make_op(x.data * y.data, (x, y),
                   lambda g: (_unbroadcast(g * y.data, x.shape),
                              _unbroadcast(g * x.data, y.shape)))


def div(x, y) -> Tensor:
    x = _lift(x, getattr(y, "dtype", None))
    y = _lift(y, x.dtype)
    _broadcast_shape(x, y)
    out = x.data / y.data
    return make_op(out, (x, y),
                   lambda g: (_unbroadcast(g / y.data, x.shape),
                              _unbroadcast(-g * out / y.data, y.shape)))


def neg(x: Tensor) -> Tensor:
    return make_op(-x.data, (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_op(out, (x,), lambda g: (g * out,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return make_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s
    return make_op(out, (x,), lambda g: (g * (s + out * (1.0 - s)),))


def softplus(x: Tensor) -> Tensor:
    a = x.data
    out = np.logaddexp(0.0, a).astype(a.dtype, copy=False)
    return make_op(out, (x,), lambda g: (g * _sigmoid(a),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    a = x.data
    scale = np.where(a > 0, 1.0, slope).astype(a.dtype)
    return make_op(a * scale, (x,), lambda g: (g * scale,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is exactly zero wherever clamping bit."""
    if not lo < hi:
        raise ContractError(f"clip needs lo < hi, got [{lo}, {hi}]")
    a = x.data
    inside = (a >= lo) & (a <= hi)
    return make_op(np.clip(a, lo, hi), (x,), lambda g: (np.where(inside, g, 0.0).astype(g.dtype),))


def absolute(x: Tensor) -> Tensor:
    a = x.data
    return make_op(np.abs(a), (x,), lambda g: (g * np.sign(a),))


# -- reductions -----------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_op(np.asarray(out), (x,), grad_fn)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis=axes, keepdims=keepdims) * (1.0 / n)


def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference; the subgradient uses sign(0) = 0."""
    if a.shape != b.shape:
        raise ShapeError(f"l1_mean needs equal shapes, got {a.shape} and {b.shape}")
    d = a.data - b.data
    n = d.size
    out = np.asarray(np.abs(d).sum() / n, dtype=d.dtype)

    def grad_fn(g):
        s = np.sign(d) * (g / n)
        return s, -s

    return make_op(out, (a, b), grad_fn)


# -- linear algebra -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching semantics on leading axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul batch mismatch: {a.shape} @ {b.shape}") from None

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_op(out, (a, b), grad_fn)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w + b`` for x of shape [..., in] and w of shape [in, out]."""
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), w)
    if b is not None:
        y = y + b
    return reshape(y, lead + (w.shape[-1],))


# -- convolution and resampling -------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Stride-1 cross-correlation with 'same' zero padding (odd square kernels)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    Co, Ci, kh, kw = w.shape
    if Ci != C:
        raise ShapeError(f"conv2d channel mismatch: input has {C}, weight expects {Ci}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    k, p = kh, kh // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # B,C,H,W,k,k
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * k * k)
    wmat = w.data.reshape(Co, C * k * k)
    out = (cols @ wmat.T).reshape(B, H, W, Co).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, w) if b is None else (x, w, b)

    def grad_fn(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * H * W, Co)
        gw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(B, H, W, C, k, k)
            gxp = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + H, j:j + W] += dcols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_op(out, parents, grad_fn)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Per-channel 'same' cross-correlation; w has shape [C, k, k]."""
    B, C, H, W = x.shape
    if w.ndim != 3 or w.shape[0] != C or w.shape[1] != w.shape[2] or w.shape[1] % 2 == 0:
        raise ShapeError(f"depthwise kernel {w.shape} does not fit input {x.shape}")
    k = w.shape[1]
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros_like(x.data)
    for i in range(k):
        for j in range(k):
            out += w.data[None, :, i, j, None, None] * xp[:, :, i:i + H, j:j + W]
    if b is not None:
        out += b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def grad_fn(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + H, j:j + W] += w.data[None, :, i, j, None, None] * g
                gw[:, i, j] = (g * xp[:, :, i:i + H, j:j + W]).sum(axis=(0, 2, 3))
        gx = gxp[:, :, p:p + H, p:p + W]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_op(out, parents, grad_fn)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling; ties route the gradient to the first maximum."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {H}x{W}")
    blocks = (x.data.reshape(B, C, H // 2, 2, W // 2, 2)
              .transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4))
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def grad_fn(g):
        g4 = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(g4, idx, g[..., None], axis=-1)
        gx = (g4.reshape(B, C, H // 2, W // 2, 2, 2)
              .transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W))
        return (gx,)

    return make_op(out, (x,), grad_fn)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsampling."""
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return make_op(out, (x,),
                   lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),))


# -- normalisation --------------------------------------------------------

def _normalize(x: Tensor, gamma: Optional[Tensor], beta: Optional[Tensor],
               axes: tuple, pshape: tuple, eps: float) -> Tensor:
    a = x.data
    n = int(np.prod([a.shape[i] for i in axes]))
    mu = a.mean(axis=axes, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data.reshape(pshape)
    if beta is not None:
        out = out + beta.data.reshape(pshape)
    red = tuple(i for i in range(a.ndim) if pshape[i] == 1)
    parents = tuple(t for t in (x, gamma, beta) if t is not None)

    def grad_fn(g):
        gh = g * gamma.data.reshape(pshape) if gamma is not None else g
        gx = inv / n * (n * gh - gh.sum(axis=axes, keepdims=True)
                        - xhat * (gh * xhat).sum(axis=axes, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=red).reshape(gamma.shape))
        if beta is not None:
            grads.append(g.sum(axis=red).reshape(beta.shape))
        return tuple(grads)

    return make_op(out, parents, grad_fn)


def instance_norm(x: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
                  eps: float = 1e-5) -> Tensor:
    """Per (sample, channel) normalisation over H, W followed by a channel affine."""
    if x.ndim != 4:
        raise ShapeError(f"instance_norm expects [B,C,H,W], got {x.shape}")
    if x.shape[2] * x.shape[3] < 2:
        raise ShapeError("instance_norm needs at least two spatial positions")
    return _normalize(x, gamma, beta, (2, 3), (1, x.shape[1], 1, 1), eps)


def layer_norm(x: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis followed by an affine on that axis."""
    pshape = (1,) * (x.ndim - 1) + (x.shape[-1],)
    return _normalize(x, gamma, beta, (x.ndim - 1,), pshape, eps)


# -- data movement --------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} into {tuple(shape)}") from None
    return make_op(out, (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for {x.ndim}-D tensor")
    inverse = tuple(np.argsort(axes))
    return make_op(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (g.transpose(inverse),))


def flip(x: Tensor, axis: int) -> Tensor:
    return make_op(np.flip(x.data, axis=axis).copy(), (x,),
                   lambda g: (np.flip(g, axis=axis).copy(),))


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis)))
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return make_op(np.array(out, copy=True), (x,), grad_fn)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_op(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)
