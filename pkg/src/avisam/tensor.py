"""Small dense-tensor engine with reverse-mode autodiff.

Values live in NumPy arrays; every differentiable op records its parents and a
closure mapping the output gradient to parent gradients.  Only the operations
the extractor needs are provided, several of them fused (GRU, layer norm,
conv1d) so the Python graph stays short.

Broadcasting is limited to leading-axis expansion: an operand whose shape is a
suffix of the other operand's shape (scalars included).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GradientContractError(RuntimeError):
    pass


def _as_array(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype.kind != "f":
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """n-dimensional array with an optional link into a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    # -- autodiff ---------------------------------------------------------
    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_leading(a: tuple, b: tuple, opname: str) -> None:
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if big[len(big) - len(small):] != small:
        raise ShapeError(f"{opname}: shapes {a} and {b} differ beyond leading-axis expansion")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# -- reverse pass -----------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
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
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise GradientContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientContractError("loss is not connected to any tensor requiring grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
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


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _check_leading(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _check_leading(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)))


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _check_leading(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _check_leading(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _reduce_to(g / bd, ad.shape), _reduce_to(-g * out / bd, bd.shape)

    return _make(out, (a, b), bw)


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _make(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),))


def clip(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clamp values; clamped entries receive zero gradient."""
    out = np.clip(a.data, lo, hi)
    inside = out == a.data
    return _make(out, (a,), lambda g: (g * inside,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    out = np.tanh(x * 0.5)
    out += 1.0
    out *= 0.5
    return out


# -- reductions and shape ops -----------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None for i in items)


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype
    basic = _is_basic(index)

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def repeat(a: Tensor, repeats: int, axis: int) -> Tensor:
    """Repeat each entry ``repeats`` times along ``axis`` (nearest upsampling)."""
    axis = axis % a.ndim
    n = a.shape[axis]

    def bw(g):
        shp = g.shape[:axis] + (n, repeats) + g.shape[axis + 1:]
        return (g.reshape(shp).sum(axis=axis + 1),)

    return _make(np.repeat(a.data, repeats, axis=axis), (a,), bw)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes expand from the left."""
    a = _wrap(a)
    b = _wrap(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    _check_leading(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data
    flat = bd.ndim == 2 and ad.ndim > 2
    # fold leading axes into rows so BLAS sees one large product
    out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + bd.shape[-1:]) if flat else ad @ bd

    def bw(g):
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape)
            gb = ad.reshape(-1, ad.shape[-1]).T @ g2
        else:
            ga = g @ np.swapaxes(bd, -1, -2)
            gb = np.swapaxes(ad, -1, -2) @ g
        return _reduce_to(ga, ad.shape), _reduce_to(gb, bd.shape)

    return _make(out, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with weight stored as [d_in, d_out]."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# -- fused normalizations ---------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape}/beta {beta.shape} do not match last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), bw)


# -- convolutions -------------------------------------------------------------

def _overlap_add(frames: np.ndarray, stride: int, out_len: int) -> np.ndarray:
    """Sum frames [..., n, L] placed every ``stride`` samples into [..., out_len]."""
    *lead, n, L = frames.shape
    k = -(-L // stride)
    padded = np.zeros((*lead, n, k * stride), dtype=frames.dtype)
    padded[..., :L] = frames
    slabs = padded.reshape(*lead, n, k, stride)
    total = (n + k - 1) * stride
    out = np.zeros((*lead, total), dtype=frames.dtype)
    for j in range(k):
        seg = slabs[..., j, :].reshape(*lead, n * stride)
        out[..., j * stride: j * stride + n * stride] += seg
    if total >= out_len:
        return out[..., :out_len]
    res = np.zeros((*lead, out_len), dtype=frames.dtype)
    res[..., :total] = out
    return res


def _frames(x: np.ndarray, L: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, L, axis=-1)
    return win[..., ::stride, :]


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Cross-correlation: x [C_in, T] (or [..., C_in, T]), kernels [C_out, C_in, L]."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    c_out, c_in, L = kernels.shape
    T = x.shape[-1]
    if x.shape[-2] != c_in:
        raise ShapeError(f"conv1d: input channels {x.shape} vs kernels {kernels.shape}")
    if T < L:
        raise InputTooShortError(f"conv1d: input length {T} shorter than kernel length {L}")
    fr = _frames(x.data, L, stride)  # [..., C_in, T', L]
    n = fr.shape[-2]
    # [..., T', C_in*L] @ [C_in*L, C_out]
    flat = np.ascontiguousarray(np.swapaxes(fr, -3, -2)).reshape(*x.shape[:-2], n, c_in * L)
    wmat = kernels.data.reshape(c_out, c_in * L).T
    out = np.swapaxes(flat @ wmat, -1, -2)  # [..., C_out, T']
    kd = kernels.data

    def bw(g):
        gt = np.swapaxes(g, -1, -2)  # [..., T', C_out]
        gw = (gt.reshape(-1, c_out).T @ flat.reshape(-1, c_in * L)).reshape(kd.shape)
        gframes = (gt @ wmat.T).reshape(*x.shape[:-2], n, c_in, L)
        gframes = np.swapaxes(gframes, -3, -2)  # [..., C_in, T', L]
        gx = _overlap_add(gframes, stride, T)
        return gx, gw

    return _make(np.ascontiguousarray(out), (x, kernels), bw)


def conv_transpose1d(x: Tensor, kernels: Tensor, stride: int, out_len: int) -> Tensor:
    """Synthesis by overlap-add: x [..., C, T'], kernels [C, L] -> [..., out_len]."""
    C, L = kernels.shape
    if x.shape[-2] != C:
        raise ShapeError(f"conv_transpose1d: input {x.shape} vs kernels {kernels.shape}")
    xt = np.swapaxes(x.data, -1, -2)  # [..., T', C]
    fr = xt @ kernels.data  # [..., T', L]
    n = fr.shape[-2]
    out = _overlap_add(fr, stride, out_len)
    kd = kernels.data

    def bw(g):
        need = (n - 1) * stride + L
        if g.shape[-1] < need:
            pad = np.zeros((*g.shape[:-1], need), dtype=g.dtype)
            pad[..., : g.shape[-1]] = g
            g = pad
        gfr = _frames(g, L, stride)[..., :n, :]  # [..., T', L]
        gk = xt.reshape(-1, C).T @ gfr.reshape(-1, L)
        gx = np.swapaxes(gfr @ kd.T, -1, -2)
        return gx, gk

    return _make(out, (x, kernels), bw)


class InputTooShortError(ValueError):
    pass


# -- recurrent layers -------------------------------------------------------

def _sigmoid_(a: np.ndarray) -> np.ndarray:
    a *= 0.5
    np.tanh(a, out=a)
    a += 1.0
    a *= 0.5
    return a


def gru(x: Tensor, w_x: Tensor, w_h: Tensor, b_x: Tensor, b_h: Tensor, reverse: bool = False) -> Tensor:
    """Gated recurrent layer over axis -2 of x [..., T, d_in]; returns [..., T, h].

    Gate order in the packed weights is (reset, update, candidate):

        r = sigmoid(x W_xr + b_xr + h W_hr + b_hr)
        z = sigmoid(x W_xz + b_xz + h W_hz + b_hz)
        n = tanh(x W_xn + b_xn + r * (h W_hn + b_hn))
        h' = (1 - z) * n + z * h

    The initial state is zero.  ``reverse`` runs the recurrence from the last
    step to the first and returns outputs in the original time order.
    """
    T, d_in = x.shape[-2], x.shape[-1]
    H = w_h.shape[0]
    if w_x.shape != (d_in, 3 * H) or w_h.shape != (H, 3 * H):
        raise ShapeError(f"gru: weights {w_x.shape}/{w_h.shape} inconsistent with input {x.shape}")
    lead = x.shape[:-2]
    xd = x.data.reshape(-1, T, d_in)
    B = xd.shape[0]
    dtype = xd.dtype
    # time-major in processing order; per-gate contiguous buffers keep the step loop cheap
    xs = np.ascontiguousarray(np.swapaxes(xd, 0, 1))
    if reverse:
        xs = xs[::-1]
    flat_x = xs.reshape(-1, d_in)
    whd, bhd, wxd, bxd = w_h.data, b_h.data, w_x.data, b_x.data
    gates_x = [
        (flat_x @ wxd[:, k * H:(k + 1) * H] + (bxd[k * H:(k + 1) * H] + bhd[k * H:(k + 1) * H] * (k < 2)))
        .reshape(T, B, H)
        for k in range(3)
    ]
    w_r, w_z, w_n = (np.ascontiguousarray(whd[:, k * H:(k + 1) * H]) for k in range(3))
    b_n = bhd[2 * H:]
    hs = np.zeros((T + 1, B, H), dtype=dtype)  # hs[0] is the zero initial state
    R = np.empty((T, B, H), dtype=dtype)
    Z = np.empty_like(R)
    N = np.empty_like(R)
    HL = np.empty_like(R)
    for t in range(T):
        h = hs[t]
        r = np.matmul(h, w_r, out=R[t])
        r += gates_x[0][t]
        _sigmoid_(r)
        z = np.matmul(h, w_z, out=Z[t])
        z += gates_x[1][t]
        _sigmoid_(z)
        hl = np.matmul(h, w_n, out=HL[t])
        hl += b_n
        n = np.multiply(r, hl, out=N[t])
        n += gates_x[2][t]
        np.tanh(n, out=n)
        h_new = hs[t + 1]
        np.subtract(h, n, out=h_new)
        h_new *= z
        h_new += n
    out_tm = hs[1:][::-1] if reverse else hs[1:]
    out = np.ascontiguousarray(np.swapaxes(out_tm, 0, 1)).reshape(*lead, T, H)

    def bw(g):
        g = np.swapaxes(g.reshape(B, T, H), 0, 1)
        if reverse:
            g = g[::-1]
        # per-step grads of the gate pre-activations; the candidate gate keeps
        # its x-side and h-side parts apart (they differ by the factor r)
        D = np.empty((T, B, 3 * H), dtype=dtype)
        DN = np.empty((T, B, H), dtype=dtype)
        w_t = np.ascontiguousarray(whd.T)
        dh = np.zeros((B, H), dtype=dtype)
        tmp = np.empty((B, H), dtype=dtype)
        for t in range(T - 1, -1, -1):
            dh += g[t]
            r, z, n = R[t], Z[t], N[t]
            dn = DN[t]
            np.subtract(1.0, z, out=dn)
            dn *= dh
            np.multiply(n, n, out=tmp)
            np.subtract(1.0, tmp, out=tmp)
            dn *= tmp
            Dt = D[t]
            dz = Dt[:, H:2 * H]
            np.subtract(hs[t], n, out=dz)
            dz *= dh
            np.subtract(1.0, z, out=tmp)
            tmp *= z
            dz *= tmp
            dr = Dt[:, :H]
            np.multiply(dn, HL[t], out=dr)
            np.subtract(1.0, r, out=tmp)
            tmp *= r
            dr *= tmp
            np.multiply(dn, r, out=Dt[:, 2 * H:])
            dh *= z
            dh += Dt @ w_t
        flat_h = D.reshape(-1, 3 * H)
        g_wh = hs[:-1].reshape(-1, H).T @ flat_h
        g_bh = flat_h.sum(axis=0)
        flat_dn = DN.reshape(-1, H)
        D[:, :, 2 * H:] = DN
        flat_pre = D.reshape(-1, 3 * H)
        g_wx = flat_x.T @ flat_pre
        g_bx = flat_pre.sum(axis=0)
        g_bh[: 2 * H] = g_bx[: 2 * H]
        del flat_dn
        g_xs = (flat_pre @ wxd.T).reshape(T, B, d_in)
        if reverse:
            g_xs = g_xs[::-1]
        g_x = np.ascontiguousarray(np.swapaxes(g_xs, 0, 1)).reshape(x.shape)
        return g_x, g_wx, g_wh, g_bx, g_bh

    return _make(out, (x, w_x, w_h, b_x, b_h), bw)


@dataclass
class GRUParams:
    w_x: Tensor
    w_h: Tensor
    b_x: Tensor
    b_h: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.b_x, self.b_h]


@dataclass
class RecurrentParams:
    forward: GRUParams
    backward: GRUParams | None = None

    def tensors(self) -> list[Tensor]:
        out = self.forward.tensors()
        if self.backward is not None:
            out += self.backward.tensors()
        return out


def init_gru(d_in: int, hidden: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> GRUParams:
    bound = 1.0 / np.sqrt(hidden)

    def u(*shape):
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)

    return GRUParams(u(d_in, 3 * hidden), u(hidden, 3 * hidden), u(3 * hidden), u(3 * hidden))


def recurrent_layer(x: Tensor, params: RecurrentParams, direction: str = "bidirectional") -> Tensor:
    """Sequence-to-sequence GRU over axis -2; bidirectional concatenates [fwd, bwd]."""
    if x.shape[-2] < 1:
        raise ShapeError("recurrent_layer needs at least one time step")
    f = params.forward
    if direction == "forward":
        return gru(x, f.w_x, f.w_h, f.b_x, f.b_h)
    if direction == "backward":
        return gru(x, f.w_x, f.w_h, f.b_x, f.b_h, reverse=True)
    if direction != "bidirectional":
        raise ValueError(f"unknown direction {direction!r}")
    if params.backward is None:
        raise ValueError("bidirectional layer needs backward-direction parameters")
    b = params.backward
    fwd = gru(x, f.w_x, f.w_h, f.b_x, f.b_h)
    bwd = gru(x, b.w_x, b.w_h, b.b_x, b.b_h, reverse=True)
    return concat([fwd, bwd], axis=-1)


# -- gradient checking ------------------------------------------------------

class EvaluationError(RuntimeError):
    pass


@dataclass
class GradReport:
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def __str__(self) -> str:
        lines = [f"{name:<32s} {err:.3e}" for name, err in self.errors.items()]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} max_rel_err={self.max_error:.3e} tol={self.tol:g}")
        return "\n".join(lines)


def _rel_err(a: np.ndarray, n: np.ndarray, floor: float) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _central_diff(f: Callable[[], Tensor], x: Tensor, flat_idx: np.ndarray, step: float = 1e-5) -> np.ndarray:
    flat = x.data.reshape(-1)
    out = np.empty(len(flat_idx))
    for k, i in enumerate(flat_idx):
        orig = flat[i]
        h = step * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"non-finite function value near index {i}")
        out[k] = (fp - fm) / (2 * h)
    return out


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    tol: float = 1e-4,
    analytic: np.ndarray | None = None,
    floor: float = 1e-6,
) -> GradReport:
    """Compare reverse-mode gradients of scalar ``f(x)`` with central differences.

    ``analytic`` overrides the backward-pass gradient (used for negative controls).
    """
    if x.dtype != np.float64:
        raise TypeError("finite_diff_check expects a float64 tensor")
    x.requires_grad = True
    x.grad = None
    y = f(x)
    if not np.all(np.isfinite(y.data)):
        raise EvaluationError("f(x) is not finite")
    if analytic is None:
        backward(y)
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    idx = np.arange(x.size)
    numeric = _central_diff(lambda: f(x), x, idx)
    err = _rel_err(np.asarray(analytic).reshape(-1), numeric, floor)
    return GradReport({x.name or "x": err}, tol)


def check_parameters(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    tol: float = 1e-4,
    max_entries: int | None = 6,
    floor: float = 1e-6,
    seed: int = 0,
    step: float = 1e-5,
) -> GradReport:
    """Finite-difference check of a scalar loss against many named parameters.

    At most ``max_entries`` randomly chosen coordinates per parameter are
    perturbed, which keeps full-model checks cheap.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        if p.dtype != np.float64:
            raise TypeError("check_parameters expects float64 parameters")
        p.requires_grad = True
        p.grad = None
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise EvaluationError("loss is not finite")
    backward(loss)
    report = GradReport(tol=tol)
    for name, p in params.items():
        n = p.size
        idx = np.arange(n) if max_entries is None or n <= max_entries else rng.choice(n, max_entries, replace=False)
        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)[idx]
        numeric = _central_diff(loss_fn, p, idx, step)
        report.errors[name] = _rel_err(analytic, numeric, floor)
    return report
