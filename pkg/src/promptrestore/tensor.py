"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is exactly what the restoration model needs: matmul (2-d and
batched), conv2d (grouped/depthwise), softmax, layer norm, pixel shuffle /
unshuffle, adaptive average pooling, bilinear resize, embedding lookup and a
small elementwise suite. Forward ops never mutate their inputs; gradients are
recorded on an explicit Tape and replayed in reverse.

Layout conventions:
  * arrays are row-major float64 throughout
  * conv2d / pooling operate on [C, H, W]
  * pixel_unshuffle packs sub-pixels row-major: output channel c*r*r + i*r + j
    holds input pixel offset (i, j) of channel c
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from . import _kernels

DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Switch the compute precision for newly created tensors.

    float64 is the default (and what the gradient checks require); float32
    roughly halves memory traffic and is offered for long training runs.
    Parameters must be created under the same mode as the activations they
    meet, so switch before building a model.
    """
    global DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError("supported dtypes: float32, float64")
    DTYPE = dtype


def default_dtype():
    return DTYPE


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN/Inf while non-finite checks were enabled."""


_state = threading.local()


def _tapes() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tapes()
    return stack[-1] if stack else None


def nan_checks_enabled() -> bool:
    return getattr(_state, "nan_checks", True)


def set_nan_checks(enabled: bool) -> None:
    """Toggle non-finite output detection (on by default).

    Enabled is the debug/test behaviour: any op whose output contains
    NaN/Inf raises NonFiniteError. Disabled propagates silently (release
    behaviour for long training runs).
    """
    _state.nan_checks = bool(enabled)


class no_nan_checks:
    """Context manager that disables non-finite checks inside its block."""

    def __enter__(self):
        self._prev = nan_checks_enabled()
        set_nan_checks(False)
        return self

    def __exit__(self, *exc):
        set_nan_checks(self._prev)
        return False


def _check_finite(arr: np.ndarray, opname: str) -> None:
    if nan_checks_enabled() and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{opname} produced non-finite values")


class Tensor:
    """A dense float64 array that can participate in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

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

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the free functions below do the work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of ops for one backward pass.

    Nodes are appended in construction order, which is topological by
    definition (an op's inputs exist before the op). backward() walks the
    list once in reverse. A Tape is single-owner; independent tapes on
    different threads do not interact.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tapes()
        assert stack and stack[-1] is self, "tape stack corrupted"
        stack.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, parents, backward) -> None:
        self._nodes.append(_Node(out, parents, backward))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Populate .grad of every requires_grad leaf reachable from loss.

        Grads accumulate (+=) into leaves, so calling backward for several
        losses (e.g. per-sample in a batch) sums their gradients.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if loss.requires_grad and id(loss) not in self._produced:
            leaves[id(loss)] = loss
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None:
                    continue
                key = id(parent)
                acc = grads.get(key)
                grads[key] = pg if acc is None else acc + pg
                if parent.requires_grad and key not in self._produced:
                    leaves[key] = parent
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            g = g.reshape(leaf.data.shape)
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(out_data: np.ndarray, parents: Sequence[Tensor], backward: Callable,
            opname: str) -> Tensor:
    _check_finite(out_data, opname)
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._record(out, tuple(parents), backward)
    return out


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} vs {b.shape}")
    return _finish(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} vs {b.shape}")
    return _finish(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _finish(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _finish(x.data * c, (x,), lambda g: (g * c,), "scale")


def neg(x: Tensor) -> Tensor:
    return _finish(-x.data, (x,), lambda g: (-g,), "neg")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b broadcast over x's leading axes (b matches trailing dims)."""
    if x.shape[x.ndim - b.ndim:] != b.shape:
        raise ShapeError(f"add_bias: trailing dims {x.shape} vs {b.shape}")
    lead = tuple(range(x.ndim - b.ndim))
    return _finish(x.data + b.data, (x, b),
                   lambda g: (g, g.sum(axis=lead) if lead else g), "add_bias")


def gelu(x: Tensor) -> Tensor:
    # tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    out, slope = _kernels.gelu(x.data)
    return _finish(out, (x,), lambda g: (g * slope,), "gelu")


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # exp overflow saturates to exact 0/1
        s = 1.0 / (1.0 + np.exp(-x.data))
    return _finish(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _finish(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _finish(np.log(xd), (x,), lambda g: (g / xd,), "log")


def absolute(x: Tensor) -> Tensor:
    xd = x.data
    return _finish(np.abs(xd), (x,), lambda g: (g * np.sign(xd),), "abs")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    mask = (xd >= lo) & (xd <= hi)
    return _finish(np.clip(xd, lo, hi), (x,), lambda g: (g * mask,), "clamp")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _finish(np.asarray(x.data.sum()), (x,),
                   lambda g: (np.broadcast_to(g, shape).copy() if shape else g,),
                   "sum")


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    return _finish(np.asarray(x.data.mean()), (x,),
                   lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean")


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    out = x.data.reshape(shape)
    return _finish(out, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    # a view; ops that need contiguity make their own copies
    return _finish(x.data.transpose(axes), (x,),
                   lambda g: (g.transpose(inv),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _finish(out, tuple(tensors), backward, "concat")


# ---------------------------------------------------------------------------
# matmul


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b for 2-d operands or stacked 3-d+ operands with equal batch dims."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError("matmul needs >= 2-d operands")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dims {ad.shape} vs {bd.shape}")
    if ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul: batch dims {ad.shape} vs {bd.shape}")
    out = np.matmul(ad, bd)

    def backward(g):
        ga = np.matmul(g, bd.swapaxes(-1, -2))
        gb = np.matmul(ad.swapaxes(-1, -2), g)
        return ga, gb

    return _finish(out, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# softmax / layer norm


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _finish(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1,
               eps: float = 1e-6) -> Tensor:
    """Normalize one axis to zero mean / unit variance, then scale and shift.

    gamma/beta are 1-d with the normalized extent. eps = 1e-6 sits inside
    the sqrt denominator.
    """
    xd = x.data
    n = xd.shape[axis]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError("layer_norm: gamma/beta must match normalized extent")
    if axis != -1 and axis != xd.ndim - 1:
        raise ShapeError("layer_norm: only the last axis is supported")
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gxh = g * gamma.data
        s1 = gxh.sum(axis=-1, keepdims=True)
        s2 = (gxh * xhat).sum(axis=-1, keepdims=True)
        dx = (gxh - s1 / n - xhat * s2 / n) * inv
        red = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=red) if red else g * xhat
        dbeta = g.sum(axis=red) if red else g
        return dx, dgamma, dbeta

    return _finish(out, (x, gamma, beta), backward, "layer_norm")


# ---------------------------------------------------------------------------
# convolution


def _conv_windows(xp: np.ndarray, kh: int, kw: int, stride: int,
                  ho: int, wo: int) -> np.ndarray:
    s0, s1, s2 = xp.strides
    return as_strided(xp, (xp.shape[0], kh, kw, ho, wo),
                      (s0, s1, s2, s1 * stride, s2 * stride))


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation of x[C_in,H,W] with w[C_out,C_in/groups,kh,kw].

    groups == C_in with single-channel filters gives depthwise mode.
    Zero padding; output size (H + 2p - kh)//stride + 1.
    """
    cin, h, wdt = x.shape
    cout, cg, kh, kw = w.shape
    if cin % groups or cout % groups:
        raise ShapeError(f"conv2d: groups={groups} must divide C_in={cin} and C_out={cout}")
    if cg != cin // groups:
        raise ShapeError(f"conv2d: weight expects {cg} channels/group, input gives {cin // groups}")
    hp, wp = h + 2 * padding, wdt + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    depthwise = groups == cin and cg == 1 and cout == cin and kh == 3 and kw == 3 \
        and stride == 1 and padding == 1
    wd = w.data
    xp = x.data if depthwise or not padding else \
        np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    if depthwise:
        out = _kernels.depthwise3x3(x.data, wd.reshape(cin, 3, 3))
    elif groups == 1:
        cols = _conv_windows(xp, kh, kw, stride, ho, wo).reshape(cin * kh * kw, ho * wo)
        out = (wd.reshape(cout, -1) @ cols).reshape(cout, ho, wo)
    else:
        win = _conv_windows(xp, kh, kw, stride, ho, wo)
        win = win.reshape(groups, cg, kh * kw, ho * wo).reshape(groups, cg * kh * kw, ho * wo)
        wg = wd.reshape(groups, cout // groups, cg * kh * kw)
        out = np.matmul(wg, win).reshape(cout, ho, wo)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        if depthwise:
            w3 = wd.reshape(cin, 3, 3)
            gx = _kernels.depthwise3x3_grad_input(g, w3)
            gw = _kernels.depthwise3x3_grad_weight(x.data, g).reshape(w.shape)
            gb = g.sum(axis=(1, 2)) if bias is not None else None
            return (gx, gw, gb) if bias is not None else (gx, gw)
        else:
            win_b = _conv_windows(xp, kh, kw, stride, ho, wo)
            if groups == 1:
                cols_b = win_b.reshape(cin * kh * kw, ho * wo)
                g2 = g.reshape(cout, ho * wo)
                gw = (g2 @ cols_b.T).reshape(w.shape)
            else:
                wing = win_b.reshape(groups, cg * kh * kw, ho * wo)
                g3 = g.reshape(groups, cout // groups, ho * wo)
                gw = np.matmul(g3, wing.swapaxes(1, 2)).reshape(w.shape)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    # w[:, :, i, j] : [C_out, C_g] ; accumulate into the strided slice
                    if groups == 1:
                        contrib = np.tensordot(wd[:, :, i, j], g, (0, 0))
                        gxp[:, i:i + ho * stride:stride, j:j + wo * stride:stride] += contrib
                    else:
                        wg_ij = wd[:, :, i, j].reshape(groups, cout // groups, cg)
                        g4 = g.reshape(groups, cout // groups, ho, wo)
                        contrib = np.einsum("goc,gohw->gchw", wg_ij, g4)
                        gxp[:, i:i + ho * stride:stride, j:j + wo * stride:stride] += \
                            contrib.reshape(cin, ho, wo)
        gx = gxp[:, padding:hp - padding, padding:wp - padding] if padding else gxp
        gb = g.sum(axis=(1, 2)) if bias is not None else None
        if bias is not None:
            return gx, gw, gb
        return gx, gw

    parents = (x, w) if bias is None else (x, w, bias)
    return _finish(out, parents, backward, "conv2d")


# ---------------------------------------------------------------------------
# pixel shuffle


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """[C,H,W] -> [C*r*r, H/r, W/r]; sub-pixel (i,j) of c lands at c*r*r+i*r+j."""
    c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: {h}x{w} not divisible by r={r}")
    ho, wo = h // r, w // r

    def fwd(a):
        return a.reshape(c, ho, r, wo, r).transpose(0, 2, 4, 1, 3).reshape(c * r * r, ho, wo)

    def inv(a):
        return a.reshape(c, r, r, ho, wo).transpose(0, 3, 1, 4, 2).reshape(c, h, w)

    return _finish(np.ascontiguousarray(fwd(x.data)), (x,),
                   lambda g: (inv(g),), "pixel_unshuffle")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """[C*r*r, H, W] -> [C, H*r, W*r]; exact inverse of pixel_unshuffle."""
    crr, h, w = x.shape
    if crr % (r * r):
        raise ShapeError(f"pixel_shuffle: {crr} channels not divisible by r^2={r * r}")
    c = crr // (r * r)

    def fwd(a):
        return a.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * r, w * r)

    def inv(a):
        return a.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(crr, h, w)

    return _finish(np.ascontiguousarray(fwd(x.data)), (x,),
                   lambda g: (inv(g),), "pixel_shuffle")


# ---------------------------------------------------------------------------
# pooling / resize (both are linear maps realized as row/col matrix sandwiches)

_pool_cache: dict[tuple, np.ndarray] = {}
_resize_cache: dict[tuple, np.ndarray] = {}


def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    key = (n_in, n_out, DTYPE)
    m = _pool_cache.get(key)
    if m is None:
        m = np.zeros((n_out, n_in), dtype=DTYPE)
        for i in range(n_out):
            lo = (i * n_in) // n_out
            hi = -(-(i + 1) * n_in // n_out)  # ceil
            m[i, lo:hi] = 1.0 / (hi - lo)
        _pool_cache[key] = m
    return m


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    # bilinear weights, align_corners convention (endpoints map to endpoints)
    key = (n_in, n_out, DTYPE)
    m = _resize_cache.get(key)
    if m is None:
        m = np.zeros((n_out, n_in), dtype=DTYPE)
        if n_out == 1 or n_in == 1:
            m[:, 0] = 1.0
        else:
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
            lo = np.floor(pos).astype(int)
            hi = np.minimum(lo + 1, n_in - 1)
            frac = pos - lo
            for i in range(n_out):
                m[i, lo[i]] += 1.0 - frac[i]
                m[i, hi[i]] += frac[i]
        _resize_cache[key] = m
    return m


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Mean-pool x[C,H,W] onto an out_h x out_w grid (floor/ceil windows)."""
    c, h, w = x.shape
    if out_h > h or out_w > w:
        raise ShapeError(f"adaptive_avg_pool: output {out_h}x{out_w} exceeds input {h}x{w}")
    rh = _pool_matrix(h, out_h)
    rw = _pool_matrix(w, out_w)
    out = np.einsum("ih,jw,chw->cij", rh, rw, x.data, optimize=True)

    def backward(g):
        return (np.einsum("ih,jw,cij->chw", rh, rw, g, optimize=True),)

    return _finish(out, (x,), backward, "adaptive_avg_pool")


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinearly resize x[H,W,C] to [out_h,out_w,C] (align-corners)."""
    h, w, _ = x.shape
    bh = _resize_matrix(h, out_h)
    bw = _resize_matrix(w, out_w)
    out = np.einsum("ih,jw,hwc->ijc", bh, bw, x.data, optimize=True)

    def backward(g):
        return (np.einsum("ih,jw,ijc->hwc", bh, bw, g, optimize=True),)

    return _finish(out, (x,), backward, "bilinear_resize")


# ---------------------------------------------------------------------------
# embedding


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: weight[V,E] gathered at integer ids -> [len(ids), E]."""
    ids = np.asarray(ids, dtype=np.int64)
    v = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise IndexError(f"embedding: id out of range 0..{v - 1}")
    out = weight.data[ids]

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        return (gw,)

    return _finish(out, (weight,), backward, "embedding")
