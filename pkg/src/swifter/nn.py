"""Small parameterized building blocks shared by the backbone and fusion model."""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, gelu, layer_norm, matmul

LAYER_NORM_EPS = 1e-5


@dataclass
class Norm:
    """Learnable layer-norm affine over the last axis."""

    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, dim: int):
        return cls(
            gain=Tensor(np.ones(dim), requires_grad=True),
            bias=Tensor(np.zeros(dim), requires_grad=True),
        )

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gain, self.bias, eps=LAYER_NORM_EPS)

    def named(self, prefix: str):
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.bias", self.bias


@dataclass
class Linear:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, std: float = 0.02):
        return cls(
            weight=Tensor(rng.normal(0.0, std, (d_in, d_out)), requires_grad=True),
            bias=Tensor(np.zeros(d_out), requires_grad=True),
        )

    def __call__(self, x) -> Tensor:
        return matmul(x, self.weight) + self.bias

    def named(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


@dataclass
class FeedForward:
    """Linear -> gelu -> Linear over the last axis."""

    w1: Linear
    w2: Linear

    @classmethod
    def init(cls, hidden: int, ff: int, rng: np.random.Generator, std: float = 0.02):
        return cls(w1=Linear.init(hidden, ff, rng, std), w2=Linear.init(ff, hidden, rng, std))

    def __call__(self, x) -> Tensor:
        return self.w2(gelu(self.w1(x)))

    def named(self, prefix: str):
        yield from self.w1.named(f"{prefix}.w1")
        yield from self.w2.named(f"{prefix}.w2")
