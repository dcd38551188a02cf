"""Conditional masked autoregressive flow."""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from sbir.distributions import LOG_2PI
from sbir.estimators.base import DensityEstimator, as_rows
from sbir.estimators.embedding import EmbeddingNet
from sbir.numerics import autograd as ag
from sbir.numerics.autograd import Tensor, check_finite
from sbir.numerics.layers import ACTIVATIONS, Linear, MaskedLinear
from sbir.numerics.made import made_masks
from sbir.numerics.module import Module

LOG_SCALE_BOUND = 5.0


class MADEBlock(Module):
    """One affine autoregressive transform ``u = (v - shift(v_<i)) * exp(-a(v_<i))``.

    The last layer starts at zero, so a fresh block is the identity.
    """

    def __init__(self, dim: int, context_dim: int, hidden: Sequence[int], activation: str, rng):
        super().__init__()
        self.dim = dim
        self.act = ACTIVATIONS[activation]
        masks = made_masks(dim, hidden, 2)
        self.layers = []
        for i, m in enumerate(masks):
            layer = MaskedLinear(m, rng, zero=i == len(masks) - 1)
            self.layers.append(self.add_module(f"m{i}", layer))
        self.ctx = None
        if context_dim > 0:
            self.ctx = self.add_module("ctx", Linear(context_dim, hidden[0], rng, bias=False))

    def params(self, v, ctx: Tensor | None) -> tuple[Tensor, Tensor]:
        h = self.layers[0](v)
        if self.ctx is not None:
            h = h + self.ctx(ctx)
        h = self.act(h)
        for layer in self.layers[1:-1]:
            h = self.act(layer(h))
        out = self.layers[-1](h)
        d = self.dim
        shift = out[:, :d]
        log_scale = ag.tanh(out[:, d:] * (1.0 / LOG_SCALE_BOUND)) * LOG_SCALE_BOUND
        return shift, log_scale

    def forward(self, v, ctx) -> tuple[Tensor, Tensor]:
        shift, log_scale = self.params(v, ctx)
        u = (v - shift) * ag.exp(-log_scale)
        return u, -log_scale.sum(axis=1)

    def inverse(self, u: np.ndarray, ctx) -> np.ndarray:
        v = np.zeros_like(u)
        for i in range(self.dim):
            shift, log_scale = self.params(v, ctx)
            v[:, i] = u[:, i] * np.exp(log_scale.value[:, i]) + shift.value[:, i]
        return v


class ConditionalMAF(DensityEstimator):
    """Stack of MADE blocks with order reversal between blocks.

    ``forward`` maps events to base noise; ``inverse`` maps noise to events.
    Base distribution is a standard normal.
    """

    kind = "maf"

    def __init__(
        self,
        event_dim: int,
        context_dim: int,
        n_flows: int = 5,
        hidden: Sequence[int] = (50, 50),
        activation: str = "tanh",
        seed: int = 0,
        embedding: EmbeddingNet | None = None,
    ):
        super().__init__(context_dim, embedding)
        self.event_dim = int(event_dim)
        self.n_flows = int(n_flows)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation, self.seed = activation, int(seed)
        rng = np.random.default_rng(seed)
        self.blocks = [
            self.add_module(
                f"b{k}", MADEBlock(self.event_dim, self.context_dim, self.hidden, activation, rng)
            )
            for k in range(self.n_flows)
        ]
        self.perm = np.arange(self.event_dim)[::-1].copy()
        self.inv_perm = np.argsort(self.perm)

    def config(self) -> dict[str, Any]:
        return {
            "event_dim": self.event_dim,
            "context_dim": self.context_dim,
            "n_flows": self.n_flows,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "seed": self.seed,
        }

    def forward_tensor(self, event, ctx: Tensor) -> tuple[Tensor, Tensor]:
        v = ag.tensor(event)
        logdet = None
        for k, block in enumerate(self.blocks):
            if k > 0:
                v = v[:, self.perm]
            v, ld = block.forward(v, ctx)
            check_finite(v, f"flow block {k}")
            logdet = ld if logdet is None else logdet + ld
        if logdet is None:
            logdet = ag.tensor(np.zeros(v.shape[0]))
        return v, logdet

    def forward(self, event, context) -> tuple[np.ndarray, np.ndarray]:
        event = as_rows(event, self.event_dim, "event")
        u, ld = self.forward_tensor(event, self._context(context))
        return u.value, ld.value

    def inverse(self, noise, context) -> np.ndarray:
        u = as_rows(noise, self.event_dim, "noise").copy()
        ctx = self._context(context)
        for k in reversed(range(self.n_flows)):
            u = self.blocks[k].inverse(u, ctx)
            if k > 0:
                u = u[:, self.inv_perm]
        return u

    def log_prob_tensor(self, event, context) -> Tensor:
        u, logdet = self.forward_tensor(event, self._context(context))
        base = (u * u).sum(axis=1) * -0.5 - 0.5 * self.event_dim * LOG_2PI
        return base + logdet

    def sample(self, n: int, context, rng: np.random.Generator) -> np.ndarray:
        if n == 0:
            return np.zeros((0, self.event_dim))
        ctx = as_rows(context, self.input_dim, "context")
        if ctx.shape[0] != 1:
            raise ValueError("sample takes a single context row")
        z = rng.standard_normal((n, self.event_dim))
        return self.inverse(z, np.repeat(ctx, n, axis=0))


def maf_log_prob(model: ConditionalMAF, theta, context) -> np.ndarray:
    return model.log_prob(theta, context)


def maf_sample(model: ConditionalMAF, n: int, context, rng: np.random.Generator) -> np.ndarray:
    return model.sample(n, context, rng)
