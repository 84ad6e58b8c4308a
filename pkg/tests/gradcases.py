"""Random instances of every autodiff primitive for finite-difference sweeps."""

import numpy as np

from savipp import ndgrad as nd
from savipp.ndgrad import Tensor


def t64(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale)


def gru_params(rng, din, d, scale=0.3, dtype=np.float64):
    return {
        "wx": Tensor((rng.standard_normal((din, 3 * d)) * scale).astype(dtype)),
        "bx": Tensor((rng.standard_normal(3 * d) * scale).astype(dtype)),
        "uh": Tensor((rng.standard_normal((d, 2 * d)) * scale).astype(dtype)),
        "uc": Tensor((rng.standard_normal((d, d)) * scale).astype(dtype)),
    }


def case(name, rng):
    """Return (fn, tensors) for one random instance of primitive ``name``."""
    r = lambda *s: int(rng.integers(1, 4)) if not s else s  # noqa: E731
    if name == "matmul":
        m, k, n = r(), r(), r()
        if rng.random() < 0.5:
            a, b = t64(rng, 2, m, k), t64(rng, 2, k, n)
        else:
            a, b = t64(rng, m, k), t64(rng, k, n)
        w = Tensor(rng.standard_normal(nd.matmul(a, b).shape))
        return lambda: nd.sum(nd.mul(nd.matmul(a, b), w)), [a, b]
    if name == "softmax":
        x = t64(rng, r(), r() + 1, r())
        axis = int(rng.integers(0, 3))
        w = Tensor(rng.standard_normal(x.shape))
        return lambda: nd.sum(nd.mul(nd.softmax_axis(x, axis), w)), [x]
    if name == "conv2d":
        s = int(rng.integers(1, 3))
        kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        pad = int(rng.integers(0, 2))
        x = t64(rng, 2, kh + int(rng.integers(0, 4)), kw + int(rng.integers(0, 4)), r())
        k = t64(rng, kh, kw, x.shape[-1], r())
        w = Tensor(rng.standard_normal(nd.conv2d(x, k, s, pad).shape))
        return lambda: nd.sum(nd.mul(nd.conv2d(x, k, s, pad), w)), [x, k]
    if name == "conv_transpose2d":
        s = int(rng.integers(1, 3))
        kh = int(rng.integers(max(s, 1), 5))
        pad = "same" if rng.random() < 0.5 else 0
        x = t64(rng, 2, r(), r(), r())
        k = t64(rng, kh, kh, x.shape[-1], r())
        w = Tensor(rng.standard_normal(nd.conv_transpose2d(x, k, s, pad).shape))
        return lambda: nd.sum(nd.mul(nd.conv_transpose2d(x, k, s, pad), w)), [x, k]
    if name == "group_norm":
        groups = int(rng.integers(1, 3))
        c = groups * int(rng.integers(1, 3))
        x = t64(rng, 2, r() + 1, r() + 1, c)
        g, b = t64(rng, c), t64(rng, c)
        w = Tensor(rng.standard_normal(x.shape))
        return lambda: nd.sum(nd.mul(nd.group_norm(x, groups, g, b), w)), [x, g, b]
    if name == "layer_norm":
        # width 2 is degenerate: the normalized output is +-1 and the input gradient is O(eps)
        x = t64(rng, r(), r(), r() + 2)
        g, b = t64(rng, x.shape[-1]), t64(rng, x.shape[-1])
        w = Tensor(rng.standard_normal(x.shape))
        return lambda: nd.sum(nd.mul(nd.layer_norm(x, g, b), w)), [x, g, b]
    if name == "gru_cell":
        d, din = r() + 1, r() + 1
        h, x = t64(rng, 2, d), t64(rng, 2, din)
        params = gru_params(rng, din, d, scale=0.7)
        w = Tensor(rng.standard_normal((2, d)))
        return lambda: nd.sum(nd.mul(nd.gru_cell(h, x, params), w)), [h, x] + list(params.values())
    if name == "elementwise":
        x = t64(rng, r(), r())
        y = Tensor(rng.uniform(0.5, 2.0, size=x.shape))
        b = t64(rng, x.shape[-1])
        w = Tensor(rng.standard_normal(x.shape))

        def fn():
            u = nd.add(nd.mul(nd.tanh(x), nd.sigmoid(x)), nd.div(nd.exp(nd.mul(x, 0.3)), y))
            u = nd.add(u, nd.sqrt(nd.add(nd.square(x), 1.0)))
            u = nd.sub(nd.add(u, b), nd.log(y))
            u = nd.add(u, nd.huber(nd.mul(x, 2.0)))
            return nd.sum(nd.mul(u, w))

        return fn, [x, y, b]
    if name == "relu":
        x = Tensor(rng.uniform(0.05, 1.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4)))
        w = Tensor(rng.standard_normal(x.shape))
        return lambda: nd.sum(nd.mul(nd.relu(x), w)), [x]
    if name == "shape":
        x = t64(rng, 2, 3, 4)
        w = Tensor(rng.standard_normal((4, 3, 2)))
        idx = rng.integers(0, 24, size=7)

        def fn():
            y = nd.transpose(nd.reshape(x, (2, 3, 4)), (2, 1, 0))
            y = nd.add(y, nd.expand(nd.reshape(nd.mean(x, axis=(0, 1)), (4, 1, 1)), (4, 3, 2)))
            z = nd.concat([y[:2], y[2:]], axis=0)
            z = nd.stack([z, z], axis=0)[1]
            extra = nd.sum(nd.take(x, idx))
            return nd.add(nd.sum(nd.mul(z, w)), extra)

        return fn, [x]
    raise KeyError(name)


PRIMITIVES = ["matmul", "softmax", "conv2d", "conv_transpose2d", "group_norm", "layer_norm",
              "gru_cell", "elementwise", "relu", "shape"]
