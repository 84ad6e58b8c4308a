"""Parameter containers and the small building blocks shared by every network part."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .. import ndgrad as nd
from ..ndgrad import Tensor


class Module:
    """Owns named parameters and child modules, both kept in registration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield prefix + name, t
        for name, mod in self._children.items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, t in own.items():
            value = np.asarray(state[name])
            if value.shape != t.shape:
                raise ValueError(f"{name}: shape {value.shape} != {t.shape}")
            t.data = value.astype(t.dtype).copy()

    def astype(self, dtype) -> "Module":
        for _, t in self.named_parameters():
            t.data = t.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def num_parameters(self) -> int:
        return int(np.sum([t.size for t in self.parameters()]))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    def __init__(self, rng, din: int, dout: int, bias: bool = True):
        super().__init__()
        self.w = self.param("w", glorot(rng, din, dout, (din, dout)))
        self.b = self.param("b", np.zeros(dout)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return nd.linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gain = self.param("gain", np.ones(dim))
        self.bias = self.param("bias", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return nd.layer_norm(x, self.gain, self.bias)


class MLP(Module):
    """Two-layer perceptron with a ReLU hidden layer."""

    def __init__(self, rng, din: int, hidden: int, dout: int):
        super().__init__()
        self.fc1 = self.child("fc1", Linear(rng, din, hidden))
        self.fc2 = self.child("fc2", Linear(rng, hidden, dout))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(nd.relu(self.fc1(x)))


class Conv(Module):
    def __init__(self, rng, cin: int, cout: int, k: int, stride: int = 1, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.kernel = self.param("kernel", glorot(rng, cin * k * k, cout * k * k / stride ** 2, (k, k, cin, cout)))
        self.bias = self.param("bias", np.zeros(cout)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = nd.conv2d(x, self.kernel, self.stride, "same")
        return nd.add(y, self.bias) if self.bias is not None else y


class ConvTranspose(Module):
    def __init__(self, rng, cin: int, cout: int, k: int, stride: int):
        super().__init__()
        self.stride = stride
        self.kernel = self.param("kernel", glorot(rng, cin * k * k / stride ** 2, cout * k * k, (k, k, cin, cout)))
        self.bias = self.param("bias", np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return nd.add(nd.conv_transpose2d(x, self.kernel, self.stride, "same"), self.bias)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int):
        super().__init__()
        self.groups = groups
        self.gain = self.param("gain", np.ones(channels))
        self.bias = self.param("bias", np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return nd.group_norm(x, self.groups, self.gain, self.bias, batch_dims=1)


class GRU(Module):
    def __init__(self, rng, din: int, d: int):
        super().__init__()
        self.wx = self.param("wx", glorot(rng, din, d, (din, 3 * d)))
        self.bx = self.param("bx", np.zeros(3 * d))
        self.uh = self.param("uh", glorot(rng, d, d, (d, 2 * d)))
        self.uc = self.param("uc", glorot(rng, d, d, (d, d)))

    def __call__(self, h: Tensor, x: Tensor) -> Tensor:
        return nd.gru_cell(h, x, {"wx": self.wx, "bx": self.bx, "uh": self.uh, "uc": self.uc})


class MultiHeadAttention(Module):
    """Scaled dot-product attention over the second-to-last axis of ``[B, N, D]``."""

    def __init__(self, rng, dim: int, heads: int, head_dim: int):
        super().__init__()
        self.heads, self.head_dim = heads, head_dim
        width = heads * head_dim
        self.q = self.child("q", Linear(rng, dim, width, bias=False))
        self.k = self.child("k", Linear(rng, dim, width, bias=False))
        self.v = self.child("v", Linear(rng, dim, width, bias=False))
        self.out = self.child("out", Linear(rng, width, dim))

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return nd.transpose(nd.reshape(x, (b, n, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        q = nd.mul(self._split(self.q(x)), 1.0 / math.sqrt(self.head_dim))
        k, v = self._split(self.k(x)), self._split(self.v(x))
        attn = nd.softmax_axis(nd.matmul(q, nd.transpose(k, (0, 1, 3, 2))), -1)
        y = nd.transpose(nd.matmul(attn, v), (0, 2, 1, 3))
        return self.out(nd.reshape(y, (b, n, self.heads * self.head_dim)))


class TransformerBlock(Module):
    """Self-attention plus MLP, each residual; ``pre_norm`` picks where LayerNorm sits."""

    def __init__(self, rng, dim: int, heads: int, head_dim: int, hidden: int, pre_norm: bool):
        super().__init__()
        self.pre_norm = pre_norm
        self.attn = self.child("attn", MultiHeadAttention(rng, dim, heads, head_dim))
        self.mlp = self.child("mlp", MLP(rng, dim, hidden, dim))
        self.norm1 = self.child("norm1", LayerNorm(dim))
        self.norm2 = self.child("norm2", LayerNorm(dim))

    def __call__(self, x: Tensor) -> Tensor:
        if self.pre_norm:
            x = nd.add(x, self.attn(self.norm1(x)))
            return nd.add(x, self.mlp(self.norm2(x)))
        x = self.norm1(nd.add(x, self.attn(x)))
        return self.norm2(nd.add(x, self.mlp(x)))


def coordinate_grid(h: int, w: int) -> np.ndarray:
    """``[h, w, 2]`` grid of (x, y) cell-center coordinates spanning [-1, 1]."""
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gx, gy], axis=-1)
