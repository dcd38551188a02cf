from __future__ import annotations

from typing import Sequence

import numpy as np

from sbir.numerics import autograd as ag
from sbir.numerics.autograd import Tensor
from sbir.numerics.module import Module

ACTIVATIONS = {"tanh": ag.tanh, "relu": ag.relu, "softplus": ag.softplus}


def glorot(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_in, n_out))


class Linear(Module):
    """Affine map ``x @ W + b`` with an optional fixed binary mask on ``W``."""

    def __init__(
        self,
        n_in: int,
        n_out: int,
        rng: np.random.Generator,
        mask: np.ndarray | None = None,
        zero: bool = False,
        bias: bool = True,
    ):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        w = np.zeros((n_in, n_out)) if zero else glorot(rng, n_in, n_out)
        if mask is not None:
            mask = np.asarray(mask, dtype=np.float64)
            if mask.shape != (n_in, n_out):
                raise ValueError(f"mask shape {mask.shape} != weight shape {(n_in, n_out)}")
            if not np.all((mask == 0) | (mask == 1)):
                raise ValueError("mask entries must be 0 or 1")
            w = w * mask
        self.mask = mask
        self.weight = self.add_param("weight", w)
        self.bias = self.add_param("bias", np.zeros(n_out)) if bias else None

    def effective_weight(self) -> np.ndarray:
        w = self.weight.value
        return w if self.mask is None else w * self.mask

    def __call__(self, x) -> Tensor:
        w = self.weight if self.mask is None else self.weight * self.mask
        out = ag.matmul(x, w)
        return out if self.bias is None else out + self.bias


class MaskedLinear(Linear):
    def __init__(self, mask: np.ndarray, rng: np.random.Generator, zero: bool = False):
        mask = np.asarray(mask, dtype=np.float64)
        super().__init__(mask.shape[0], mask.shape[1], rng, mask=mask, zero=zero)


class MLP(Module):
    """Feedforward net; hidden layers use ``activation``, the last layer is linear."""

    def __init__(
        self,
        n_in: int,
        hidden: Sequence[int],
        n_out: int,
        rng: np.random.Generator,
        activation: str = "tanh",
        zero_last: bool = True,
    ):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.act = ACTIVATIONS[activation]
        sizes = [n_in, *hidden, n_out]
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            layer = Linear(a, b, rng, zero=zero_last and last)
            self.add_module(f"l{i}", layer)
            self.layers.append(layer)

    def __call__(self, x) -> Tensor:
        h = x
        for layer in self.layers[:-1]:
            h = self.act(layer(h))
        return self.layers[-1](h)
