"""Hot inner loops: depthwise 3x3 convolution (stride 1, zero pad 1) and GELU.

These memory-bound kernels dominate desk-scale training, so they get numba
JIT implementations; pure-numpy fallbacks keep the package importable
without numba. The conv2d and gelu contract tests compare against
independent oracles either way.

All kernels are dtype-generic: they inherit the input array's dtype, which
is how the optional float32 compute mode stays fast.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


def _pad1(x):
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    return xp


def _depthwise3x3_np(x, w):
    c, h, wd = x.shape
    xp = _pad1(x)
    out = np.zeros_like(x)
    for i in range(3):
        for j in range(3):
            out += w[:, i, j, None, None] * xp[:, i:i + h, j:j + wd]
    return out


def _depthwise3x3_grad_input_np(g, w):
    c, h, wd = g.shape
    gxp = np.zeros((c, h + 2, wd + 2), dtype=g.dtype)
    for i in range(3):
        for j in range(3):
            gxp[:, i:i + h, j:j + wd] += w[:, i, j, None, None] * g
    return gxp[:, 1:-1, 1:-1]


def _depthwise3x3_grad_weight_np(x, g):
    xp = _pad1(x)
    c, h, wd = g.shape
    gw = np.empty((c, 3, 3), dtype=g.dtype)
    for i in range(3):
        for j in range(3):
            gw[:, i, j] = (xp[:, i:i + h, j:j + wd] * g).sum(axis=(1, 2))
    return gw


def _gelu_np(x):
    inner = _GELU_K * (x + _GELU_C * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)
    dinner = _GELU_K * (1.0 + 3 * _GELU_C * x ** 2)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner
    return y.astype(x.dtype, copy=False), dy.astype(x.dtype, copy=False)


if _HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def _dw_fwd(x, w):  # pragma: no cover - numba
        c, h, wd = x.shape
        out = np.empty_like(x)
        for ch in range(c):
            for y in range(h):
                for xx in range(wd):
                    acc = x[ch, y, xx] * w[ch, 1, 1]
                    if y > 0:
                        acc += x[ch, y - 1, xx] * w[ch, 0, 1]
                        if xx > 0:
                            acc += x[ch, y - 1, xx - 1] * w[ch, 0, 0]
                        if xx < wd - 1:
                            acc += x[ch, y - 1, xx + 1] * w[ch, 0, 2]
                    if xx > 0:
                        acc += x[ch, y, xx - 1] * w[ch, 1, 0]
                    if xx < wd - 1:
                        acc += x[ch, y, xx + 1] * w[ch, 1, 2]
                    if y < h - 1:
                        acc += x[ch, y + 1, xx] * w[ch, 2, 1]
                        if xx > 0:
                            acc += x[ch, y + 1, xx - 1] * w[ch, 2, 0]
                        if xx < wd - 1:
                            acc += x[ch, y + 1, xx + 1] * w[ch, 2, 2]
                    out[ch, y, xx] = acc
        return out

    @numba.njit(cache=True, fastmath=False)
    def _dw_grad_input(g, w):  # pragma: no cover - numba
        # gather form: gx[u,v] = sum_ij w[i,j] * g[u-i+1, v-j+1]
        c, h, wd = g.shape
        gx = np.empty_like(g)
        for ch in range(c):
            for u in range(h):
                for v in range(wd):
                    acc = g[ch, u, v] * w[ch, 1, 1]
                    if u < h - 1:
                        acc += g[ch, u + 1, v] * w[ch, 0, 1]
                        if v < wd - 1:
                            acc += g[ch, u + 1, v + 1] * w[ch, 0, 0]
                        if v > 0:
                            acc += g[ch, u + 1, v - 1] * w[ch, 0, 2]
                    if v < wd - 1:
                        acc += g[ch, u, v + 1] * w[ch, 1, 0]
                    if v > 0:
                        acc += g[ch, u, v - 1] * w[ch, 1, 2]
                    if u > 0:
                        acc += g[ch, u - 1, v] * w[ch, 2, 1]
                        if v < wd - 1:
                            acc += g[ch, u - 1, v + 1] * w[ch, 2, 0]
                        if v > 0:
                            acc += g[ch, u - 1, v - 1] * w[ch, 2, 2]
                    gx[ch, u, v] = acc
        return gx

    @numba.njit(cache=True, fastmath=False)
    def _dw_grad_weight(x, g):  # pragma: no cover - numba
        c, h, wd = g.shape
        gw = np.zeros((c, 3, 3), dtype=g.dtype)
        for ch in range(c):
            a00 = a01 = a02 = a10 = a11 = a12 = a20 = a21 = a22 = x[ch, 0, 0] * 0
            for y in range(h):
                for xx in range(wd):
                    gv = g[ch, y, xx]
                    a11 += gv * x[ch, y, xx]
                    if y > 0:
                        a01 += gv * x[ch, y - 1, xx]
                        if xx > 0:
                            a00 += gv * x[ch, y - 1, xx - 1]
                        if xx < wd - 1:
                            a02 += gv * x[ch, y - 1, xx + 1]
                    if xx > 0:
                        a10 += gv * x[ch, y, xx - 1]
                    if xx < wd - 1:
                        a12 += gv * x[ch, y, xx + 1]
                    if y < h - 1:
                        a21 += gv * x[ch, y + 1, xx]
                        if xx > 0:
                            a20 += gv * x[ch, y + 1, xx - 1]
                        if xx < wd - 1:
                            a22 += gv * x[ch, y + 1, xx + 1]
            gw[ch, 0, 0], gw[ch, 0, 1], gw[ch, 0, 2] = a00, a01, a02
            gw[ch, 1, 0], gw[ch, 1, 1], gw[ch, 1, 2] = a10, a11, a12
            gw[ch, 2, 0], gw[ch, 2, 1], gw[ch, 2, 2] = a20, a21, a22
        return gw

    @numba.njit(cache=True, fastmath=False)
    def _gelu_inner(x, k, c3):  # pragma: no cover - numba
        u = np.empty_like(x)
        for i in range(x.size):
            v = x[i]
            u[i] = k * (v + c3 * v * v * v)
        return u

    @numba.njit(cache=True, fastmath=False)
    def _gelu_outer(x, t, k, dc, half, one):  # pragma: no cover - numba
        y = np.empty_like(x)
        dy = np.empty_like(x)
        for i in range(x.size):
            v = x[i]
            ti = t[i]
            a = half * (one + ti)
            y[i] = a * v
            dy[i] = a + half * v * (one - ti * ti) * k * (one + dc * v * v)
        return y, dy

    def gelu(x):
        # polynomial passes in numba, tanh through numpy's SIMD kernel;
        # constants pre-cast so float32 inputs stay float32 throughout
        flat = np.ascontiguousarray(x).reshape(-1)
        dt = flat.dtype.type
        t = np.tanh(_gelu_inner(flat, dt(_GELU_K), dt(_GELU_C)))
        y, dy = _gelu_outer(flat, t, dt(_GELU_K), dt(3 * _GELU_C),
                            dt(0.5), dt(1.0))
        return y.reshape(x.shape), dy.reshape(x.shape)

    def depthwise3x3(x, w):
        return _dw_fwd(np.ascontiguousarray(x), np.ascontiguousarray(w))

    def depthwise3x3_grad_input(g, w):
        return _dw_grad_input(np.ascontiguousarray(g), np.ascontiguousarray(w))

    def depthwise3x3_grad_weight(x, g):
        return _dw_grad_weight(np.ascontiguousarray(x), np.ascontiguousarray(g))

else:
    gelu = _gelu_np
    depthwise3x3 = _depthwise3x3_np
    depthwise3x3_grad_input = _depthwise3x3_grad_input_np
    depthwise3x3_grad_weight = _depthwise3x3_grad_weight_np
