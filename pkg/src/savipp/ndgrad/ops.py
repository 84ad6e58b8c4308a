"""Differentiable primitives over :class:`Tensor`.

Layout conventions: images are channels-last (``..., H, W, C``); conv kernels
are ``(kh, kw, Cin, Cout)``. Binary elementwise ops accept operands of equal
shape, a python scalar, or a trailing-suffix operand (bias-style); anything
else is a :class:`ShapeError`. Use :func:`expand` for explicit broadcasting.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ContractError, ShapeError, Tensor, make_node

NORM_EPS = 1e-6


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` over leading axes so it matches the trailing-suffix ``shape``."""
    if g.shape == shape:
        return g
    return g.reshape((-1,) + tuple(shape)).sum(axis=0)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    small, big = (sb, sa) if len(sb) <= len(sa) else (sa, sb)
    if len(small) == 0 or big[len(big) - len(small):] == small:
        return
    raise ShapeError(f"{op}: shapes {sa} and {sb} are not equal or bias-compatible")


def _out_shape(a: Tensor, b: Tensor) -> tuple:
    return a.shape if a.ndim >= b.ndim else b.shape


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_binary(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _reduce_to(g, sa), _reduce_to(g, sb)

    return make_node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_binary(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _reduce_to(g, sa), _reduce_to(-g, sb)

    return make_node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return make_node(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_binary(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = g / bd
        return _reduce_to(ga, ad.shape), _reduce_to(-ga * out, bd.shape)

    return make_node(out, (a, b), bw, "div")


def neg(x: Tensor) -> Tensor:
    return make_node(-x.data, (x,), lambda g: (-g,), "neg")


# -- elementwise unary -------------------------------------------------------

def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_node(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_node(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_node(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def huber(x: Tensor, delta: float = 1.0) -> Tensor:
    """Elementwise 0.5 x^2 inside [-delta, delta], delta (|x| - 0.5 delta) outside."""
    xd = x.data
    ax = np.abs(xd)
    out = np.where(ax <= delta, 0.5 * xd * xd, delta * (ax - 0.5 * delta)).astype(xd.dtype)
    return make_node(out, (x,), lambda g: (g * np.clip(xd, -delta, delta),), "huber")


# -- reductions and shape ----------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype
    basic = _is_basic_index(index)

    def bw(g):
        z = np.zeros(shape, dtype=dtype)
        if basic:
            z[index] = g
        else:
            np.add.at(z, index, g)
        return (z,)

    return make_node(np.array(x.data[index]), (x,), bw, "getitem")


def take(x: Tensor, flat_index: np.ndarray) -> Tensor:
    """Gather ``x.ravel()[flat_index]`` as a 1-D tensor."""
    flat_index = np.asarray(flat_index, dtype=np.int64)
    shape, size, dtype = x.shape, x.size, x.dtype

    def bw(g):
        z = np.bincount(flat_index, weights=g, minlength=size).astype(dtype)
        return (z.reshape(shape),)

    return make_node(x.data.reshape(-1)[flat_index], (x,), bw, "take")


def concat(xs, axis: int = -1) -> Tensor:
    xs = list(xs)
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(np.concatenate([t.data for t in xs], axis=axis), xs, bw, "concat")


def stack(xs, axis: int = 0) -> Tensor:
    xs = list(xs)
    n = len(xs)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return make_node(np.stack([t.data for t in xs], axis=axis), xs, bw, "stack")


def expand(x: Tensor, shape) -> Tensor:
    """Explicit numpy-style broadcast of ``x`` to ``shape``."""
    shape = tuple(shape)
    src = x.shape
    lead = len(shape) - len(src)
    if lead < 0:
        raise ShapeError(f"expand: cannot expand {src} to {shape}")
    padded = (1,) * lead + src
    for s, t in zip(padded, shape):
        if s != t and s != 1:
            raise ShapeError(f"expand: cannot expand {src} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(padded, shape)) if s != t or i < lead)

    def bw(g):
        r = g.sum(axis=axes, keepdims=True) if axes else g
        return (r.reshape(src),)

    return make_node(np.broadcast_to(x.data, shape).copy(), (x,), bw, "expand")


def stop_gradient(x: Tensor) -> Tensor:
    """Pass values forward, block all backward flow."""
    out = Tensor(x.data)
    out.op = "stop_gradient"
    return out


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` (shared weight) or batched with equal batch dims."""
    a, b = _lift(a), _lift(b, a)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim < 2:
        raise ShapeError(f"matmul: unsupported shapes {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ for {ad.shape} and {bd.shape}")
    if bd.ndim == 2:
        k, n = bd.shape
        a2 = ad.reshape(-1, k)
        out = (a2 @ bd).reshape(ad.shape[:-1] + (n,))

        def bw(g):
            g2 = g.reshape(-1, n)
            return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2

        return make_node(out, (a, b), bw, "matmul")
    if ad.ndim != bd.ndim or ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ for {ad.shape} and {bd.shape}")
    out = ad @ bd

    def bw_batched(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return make_node(out, (a, b), bw_batched, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def softmax_axis(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    if not -xd.ndim <= axis < xd.ndim:
        raise ShapeError(f"softmax_axis: axis {axis} invalid for shape {xd.shape}")
    z = xd - np.max(xd, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return make_node(out, (x,), bw, "softmax")


# -- normalization -----------------------------------------------------------

def _normalize(xd: np.ndarray, axes: tuple, eps: float):
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv


def _normalize_bw(g_hat: np.ndarray, xhat: np.ndarray, inv: np.ndarray, axes: tuple):
    m1 = g_hat.mean(axis=axes, keepdims=True)
    m2 = (g_hat * xhat).mean(axis=axes, keepdims=True)
    return inv * (g_hat - m1 - xhat * m2)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Normalize over the last axis, then per-feature affine."""
    xd, gd = x.data, gain.data
    xhat, inv = _normalize(xd, (-1,), eps)
    out = xhat * gd + bias.data
    lead = (-1, xd.shape[-1])

    def bw(g):
        gx = _normalize_bw(g * gd, xhat, inv, (-1,))
        g2 = g.reshape(lead)
        return gx, (g2 * xhat.reshape(lead)).sum(0), g2.sum(0)

    return make_node(out, (x, gain, bias), bw, "layer_norm")


def group_norm(x: Tensor, groups: int, gain: Tensor, bias: Tensor,
               eps: float = NORM_EPS, batch_dims: int | None = None) -> Tensor:
    """Group normalization over (spatial x in-group channels), then per-channel affine.

    ``batch_dims`` leading axes are independent samples; default treats a
    rank-3 input as one ``H x W x C`` image and rank-4 as ``N x H x W x C``.
    """
    xd = x.data
    c = xd.shape[-1]
    if groups <= 0 or c % groups:
        raise ValueError(f"group_norm: {c} channels not divisible into {groups} groups")
    if batch_dims is None:
        batch_dims = max(xd.ndim - 3, 0)
    xg = xd.reshape(xd.shape[:-1] + (groups, c // groups))
    axes = tuple(range(batch_dims, xd.ndim - 1)) + (xd.ndim,)
    xhat_g, inv = _normalize(xg, axes, eps)
    xhat = xhat_g.reshape(xd.shape)
    gd = gain.data
    out = xhat * gd + bias.data

    def bw(g):
        gh = (g * gd).reshape(xg.shape)
        gx = _normalize_bw(gh, xhat_g, inv, axes).reshape(xd.shape)
        g2 = g.reshape(-1, c)
        return gx, (g2 * xhat.reshape(-1, c)).sum(0), g2.sum(0)

    return make_node(out, (x, gain, bias), bw, "group_norm")


# -- convolution -------------------------------------------------------------

def _pad_amounts(padding, k: int, stride: int, size: int) -> tuple:
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        return total // 2, total - total // 2
    p = int(padding)
    if p < 0:
        raise ValueError(f"negative padding {p}")
    return p, p


def _scatter_windows(y: np.ndarray, out_hw: tuple, stride: int) -> np.ndarray:
    """Overlap-add ``y[N, Hi, Wi, kh, kw, C]`` into ``[N, Ho, Wo, C]`` at ``stride``."""
    n, hi, wi, kh, kw, c = y.shape
    s = stride
    if s > 1 and kh % s == 0 and kw % s == 0:
        # split each tap into (block offset, phase): far fewer, larger adds
        mh, mw = kh // s, kw // s
        full = np.zeros((n, hi + mh - 1, s, wi + mw - 1, s, c), dtype=y.dtype)
        y8 = y.reshape(n, hi, wi, mh, s, mw, s, c)
        for q in range(mh):
            for p in range(mw):
                full[:, q:q + hi, :, p:p + wi, :, :] += y8[:, :, :, q, :, p, :, :].transpose(0, 1, 3, 2, 4, 5)
        full = full.reshape(n, s * (hi + mh - 1), s * (wi + mw - 1), c)
        if full.shape[1:3] == tuple(out_hw):
            return full
        out = np.zeros((n,) + tuple(out_hw) + (c,), dtype=y.dtype)
        out[:, :full.shape[1], :full.shape[2], :] = full
        return out
    out = np.zeros((n,) + tuple(out_hw) + (c,), dtype=y.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * (hi - 1) + 1:stride, j:j + stride * (wi - 1) + 1:stride, :] += y[:, :, :, i, j, :]
    return out


def _gather_taps(x: np.ndarray, hi: int, wi: int, kh: int, kw: int, stride: int) -> np.ndarray:
    """``[N, hi, wi, kh, kw, C]`` with entry ``x[n, s*a + i, s*b + j, c]``; inverse layout of the scatter."""
    n, c = x.shape[0], x.shape[-1]
    s = stride
    if s > 1 and kh % s == 0 and kw % s == 0:
        mh, mw = kh // s, kw // s
        x6 = x[:, :s * (hi + mh - 1), :s * (wi + mw - 1), :].reshape(n, hi + mh - 1, s, wi + mw - 1, s, c)
        out = np.empty((n, hi, wi, mh, s, mw, s, c), dtype=x.dtype)
        for q in range(mh):
            for p in range(mw):
                out[:, :, :, q, :, p, :, :] = x6[:, q:q + hi, :, p:p + wi, :, :].transpose(0, 1, 3, 2, 4, 5)
        return out.reshape(n, hi, wi, kh, kw, c)
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::s, ::s][:, :hi, :wi]
    return win.transpose(0, 1, 2, 4, 5, 3)


def _gather_windows(x: np.ndarray, k: tuple, stride: int) -> np.ndarray:
    """Strided window view ``[N, Ho, Wo, C, kh, kw]`` over ``x[N, H, W, C]``."""
    win = sliding_window_view(x, k, axis=(1, 2))
    return win[:, ::stride, ::stride]


def _as_batched(x: Tensor):
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected H x W x C or N x H x W x C input, got {x.shape}")
    return x, False


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding=0) -> Tensor:
    """Cross-correlation; output extent floor((H + 2p - kh) / stride) + 1."""
    if int(stride) < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    x4, squeeze = _as_batched(x)
    xd, kd = x4.data, kernel.data
    n, h, w, cin = xd.shape
    kh, kw, kc, cout = kd.shape
    if kc != cin:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {kc}")
    ph, pw = _pad_amounts(padding, kh, stride, h), _pad_amounts(padding, kw, stride, w)
    hp, wp = h + ph[0] + ph[1], w + pw[0] + pw[1]
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {kd.shape[:2]} exceeds padded input {(hp, wp)}")
    xp = np.pad(xd, ((0, 0), ph, pw, (0, 0))) if (ph != (0, 0) or pw != (0, 0)) else xd
    win = _gather_windows(xp, (kh, kw), stride)
    ho, wo = win.shape[1], win.shape[2]
    k_flat = kd.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    cols = win.reshape(n * ho * wo, cin * kh * kw)
    out = (cols @ k_flat).reshape(n, ho, wo, cout)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gk = (cols.T @ g2).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        y = (g2 @ kd.transpose(3, 0, 1, 2).reshape(cout, kh * kw * cin)).reshape(n, ho, wo, kh, kw, cin)
        gxp = _scatter_windows(y, (hp, wp), stride)
        gx = gxp[:, ph[0]:ph[0] + h, pw[0]:pw[0] + w, :]
        return np.ascontiguousarray(gx), gk

    res = make_node(out, (x4, kernel), bw, "conv2d")
    return reshape(res, res.shape[1:]) if squeeze else res


def conv_transpose2d(x: Tensor, kernel: Tensor, stride: int = 1, padding=0) -> Tensor:
    """Adjoint of conv2d. Full output extent is (H - 1) * stride + kh.

    ``padding`` crops the full output: an int crops that many rows/cols from
    every side; ``"same"`` crops to exactly ``H * stride``.
    """
    if int(stride) < 1:
        raise ValueError(f"conv_transpose2d: stride must be >= 1, got {stride}")
    x4, squeeze = _as_batched(x)
    xd, kd = x4.data, kernel.data
    n, h, w, cin = xd.shape
    kh, kw, kc, cout = kd.shape
    if kc != cin:
        raise ShapeError(f"conv_transpose2d: input channels {cin} != kernel channels {kc}")
    hf, wf = (h - 1) * stride + kh, (w - 1) * stride + kw
    if padding == "same":
        if kh < stride or kw < stride:
            raise ValueError("conv_transpose2d: 'same' needs kernel >= stride")
        ch, cw = kh - stride, kw - stride
        crop = (ch // 2, ch - ch // 2, cw // 2, cw - cw // 2)
    else:
        p = int(padding)
        if 2 * p >= min(hf, wf):
            raise ValueError(f"conv_transpose2d: padding {p} too large")
        crop = (p, p, p, p)
    k_flat = kd.reshape(kh * kw, cin, cout).transpose(1, 0, 2).reshape(cin, kh * kw * cout)
    y = (xd.reshape(-1, cin) @ k_flat).reshape(n, h, w, kh, kw, cout)
    full = _scatter_windows(y, (hf, wf), stride)
    out = full[:, crop[0]:hf - crop[1], crop[2]:wf - crop[3], :]

    def bw(g):
        gf = np.zeros((n, hf, wf, cout), dtype=g.dtype)
        gf[:, crop[0]:hf - crop[1], crop[2]:wf - crop[3], :] = g
        gy = _gather_taps(gf, h, w, kh, kw, stride).reshape(n * h * w, kh * kw * cout)
        gx = (gy @ k_flat.T).reshape(n, h, w, cin)
        gk = (xd.reshape(-1, cin).T @ gy).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        return gx, gk

    res = make_node(np.ascontiguousarray(out), (x4, kernel), bw, "conv_transpose2d")
    return reshape(res, res.shape[1:]) if squeeze else res


# -- recurrent cell ----------------------------------------------------------

def gru_cell(h: Tensor, x: Tensor, params: dict) -> Tensor:
    """Gated recurrent update ``h' = (1 - z) * h + z * candidate``.

    ``params``: ``wx`` (Din x 3D) and ``bx`` (3D) for the input path, ``uh``
    (D x 2D) for the hidden path of the z/r gates, ``uc`` (D x D) for the
    hidden path of the candidate. Gate order in the packed axis is z, r, c.
    """
    d = h.shape[-1]
    xp = linear(x, params["wx"], params["bx"])
    hp = matmul(h, params["uh"])
    z = sigmoid(add(xp[..., :d], hp[..., :d]))
    r = sigmoid(add(xp[..., d:2 * d], hp[..., d:]))
    cand = tanh(add(xp[..., 2 * d:], matmul(mul(r, h), params["uc"])))
    return add(h, mul(z, sub(cand, h)))


def check_finite(x: Tensor, what: str = "tensor") -> None:
    if not np.all(np.isfinite(x.data)):
        raise ContractError(f"{what} contains non-finite values")
