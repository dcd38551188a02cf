from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from sbir.numerics import autograd as ag
from sbir.numerics.autograd import Tensor
from sbir.numerics.layers import MLP, Linear
from sbir.numerics.module import Module


class EmbeddingNet(Module):
    """Trainable summary of raw simulator output, in residual form.

    ``embed(x) = P x + mlp(x)`` where ``P`` is the identity when the input and
    output widths agree (otherwise a learned projection) and the last MLP layer
    starts at zero. A fresh net with ``raw_dim == out_dim`` is the identity.
    """

    def __init__(
        self,
        raw_dim: int,
        out_dim: int,
        hidden: Sequence[int] = (50,),
        activation: str = "tanh",
        seed: int = 0,
    ):
        super().__init__()
        self.raw_dim, self.out_dim = int(raw_dim), int(out_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation, self.seed = activation, int(seed)
        rng = np.random.default_rng(seed)
        self.proj = None
        if self.raw_dim != self.out_dim:
            self.proj = self.add_module("proj", Linear(self.raw_dim, self.out_dim, rng, bias=False))
        self.mlp = self.add_module(
            "mlp", MLP(self.raw_dim, self.hidden, self.out_dim, rng, activation)
        )

    def __call__(self, raw) -> Tensor:
        raw = ag.tensor(raw)
        if raw.ndim != 2 or raw.shape[1] != self.raw_dim:
            raise ValueError(f"embedding expects raw dim {self.raw_dim}, got shape {raw.shape}")
        skip = raw if self.proj is None else self.proj(raw)
        return skip + self.mlp(raw)

    def config(self) -> dict[str, Any]:
        return {
            "raw_dim": self.raw_dim,
            "out_dim": self.out_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "seed": self.seed,
        }


def embed(model: EmbeddingNet, raw) -> np.ndarray:
    return model(np.asarray(raw, dtype=np.float64)).value
