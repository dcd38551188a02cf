from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from sbir.distributions import LOG_2PI
from sbir.estimators.base import DensityEstimator, as_rows
from sbir.estimators.embedding import EmbeddingNet
from sbir.numerics import autograd as ag
from sbir.numerics.autograd import Tensor
from sbir.numerics.layers import MLP, Linear

# scale of the random init of the mean head; zero would keep all components
# identical forever since they receive identical gradients
MEAN_HEAD_INIT = 0.01


class MixtureDensityNet(DensityEstimator):
    """Gaussian mixture with diagonal covariances, parameterized by the context.

    With ``zero_init=True`` every head starts at zero: equal weights, zero
    means and unit variances, i.e. a standard normal for any context.
    """

    kind = "mdn"

    def __init__(
        self,
        event_dim: int,
        context_dim: int,
        n_components: int = 10,
        hidden: Sequence[int] = (50, 50),
        activation: str = "tanh",
        seed: int = 0,
        zero_init: bool = False,
        embedding: EmbeddingNet | None = None,
    ):
        super().__init__(context_dim, embedding)
        self.event_dim = int(event_dim)
        self.n_components = int(n_components)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation, self.seed, self.zero_init = activation, int(seed), bool(zero_init)
        rng = np.random.default_rng(seed)
        k, d = self.n_components, self.event_dim
        self.trunk = self.add_module(
            "trunk", MLP(self.context_dim, self.hidden[:-1], self.hidden[-1], rng, activation, zero_last=False)
        )
        width = self.hidden[-1]
        self.logits = self.add_module("logits", Linear(width, k, rng, zero=True))
        self.means = self.add_module("means", Linear(width, k * d, rng, zero=True))
        if not zero_init:
            self.means.weight.value = MEAN_HEAD_INIT * rng.standard_normal((width, k * d))
            self.means.bias.value = MEAN_HEAD_INIT * rng.standard_normal(k * d)
        self.log_vars = self.add_module("log_vars", Linear(width, k * d, rng, zero=True))

    def config(self) -> dict[str, Any]:
        return {
            "event_dim": self.event_dim,
            "context_dim": self.context_dim,
            "n_components": self.n_components,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "seed": self.seed,
            "zero_init": self.zero_init,
        }

    def mixture_params(self, context) -> tuple[Tensor, Tensor, Tensor]:
        """Log mixture weights (B, K), means and log variances (B, K, D)."""
        h = self.trunk.act(self.trunk(self._context(context)))
        logits = self.logits(h)
        log_w = logits - ag.reshape(ag.logsumexp(logits, axis=1), (-1, 1))
        shape = (-1, self.n_components, self.event_dim)
        return log_w, ag.reshape(self.means(h), shape), ag.reshape(self.log_vars(h), shape)

    def log_prob_tensor(self, event, context) -> Tensor:
        log_w, mu, log_var = self.mixture_params(context)
        ev = ag.tensor(event)
        diff = ag.reshape(ev, (-1, 1, self.event_dim)) - mu
        quad = diff * diff * ag.exp(-log_var)
        comp = (quad + log_var).sum(axis=2) * -0.5 - 0.5 * self.event_dim * LOG_2PI
        return ag.logsumexp(log_w + comp, axis=1)

    def sample(self, n: int, context, rng: np.random.Generator) -> np.ndarray:
        if n == 0:
            return np.zeros((0, self.event_dim))
        ctx = as_rows(context, self.input_dim, "context")
        if ctx.shape[0] != 1:
            raise ValueError("sample takes a single context row")
        log_w, mu, log_var = (t.value[0] for t in self.mixture_params(ctx))
        w = np.exp(log_w - np.max(log_w))
        comp = rng.choice(self.n_components, size=n, p=w / w.sum())
        eps = rng.standard_normal((n, self.event_dim))
        return mu[comp] + np.exp(0.5 * log_var[comp]) * eps


def mdn_log_prob(model: MixtureDensityNet, theta, context) -> np.ndarray:
    return model.log_prob(theta, context)
