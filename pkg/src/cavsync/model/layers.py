"""Transformer building blocks on top of the tensor engine."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..numerics import Tensor, gelu, layer_norm, softmax_row

LN_EPS = 1e-6


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Module:
    """Parameter container; attributes that are Tensors, Modules or lists of Modules are walked."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.w = parameter(xavier(rng, fan_in, fan_out))
        self.b = parameter(np.zeros(fan_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, LN_EPS)


class Attention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.heads
        qkv = self.qkv(x).reshape(b, n, 3, h, d // h).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = softmax_row((q @ k.T) * (1.0 / np.sqrt(d // h)))
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.proj(out)


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class Block(Module):
    """Pre-norm transformer block: norm, attention, residual, norm, MLP, residual."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_ratio: float = 4.0):
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng)

    def __call__(self, x: Tensor, norm1: LayerNorm | None = None,
                 norm2: LayerNorm | None = None) -> Tensor:
        x = x + self.attn((norm1 or self.norm1)(x))
        return x + self.mlp((norm2 or self.norm2)(x))


class NormSet(Module):
    """The layer norms used by one pass through a shared block, plus the output norm."""

    def __init__(self, dim: int):
        self.norm1 = LayerNorm(dim)
        self.norm2 = LayerNorm(dim)
        self.out = LayerNorm(dim)


class JointBlock(Module):
    """One set of attention/MLP weights shared by three passes with separate norms."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_ratio: float = 4.0):
        self.attn = Attention(dim, heads, rng)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng)
        self.ln_a = NormSet(dim)
        self.ln_v = NormSet(dim)
        self.ln_joint = NormSet(dim)

    def __call__(self, x: Tensor, norms: NormSet) -> Tensor:
        x = x + self.attn(norms.norm1(x))
        x = x + self.mlp(norms.norm2(x))
        return norms.out(x)
