"""Dense layers and small MLPs built on the autodiff primitives."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot_uniform(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


class Dense:
    """Affine map y = x W + b for batched row vectors."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator) -> None:
        self.weight = ad.parameter(glorot_uniform(rng, d_in, d_out))
        self.bias = ad.parameter(np.zeros((1, d_out)))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add_bias(ad.matmul(x, self.weight), self.bias)

    @property
    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


_ACT = {"relu": ad.relu, "tanh": ad.tanh, "identity": lambda t: t}


def apply_activation(name: str, x: Tensor) -> Tensor:
    try:
        return _ACT[name](x)
    except KeyError:
        raise ValueError(f"unknown activation '{name}'") from None


class Mlp:
    """Stack of Dense layers with a fixed hidden activation.

    ``dims`` lists layer widths input-first; the final layer applies
    ``final_activation`` (default: none).
    """

    def __init__(
        self,
        dims: Sequence[int],
        rng: np.random.Generator,
        activation: str = "relu",
        final_activation: Optional[str] = None,
    ) -> None:
        if len(dims) < 2:
            raise ValueError("Mlp needs at least input and output widths")
        self.layers = [Dense(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]
        self.activation = activation
        self.final_activation = final_activation

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last:
                x = apply_activation(self.activation, x)
            elif self.final_activation is not None:
                x = apply_activation(self.final_activation, x)
        return x

    @property
    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params]
