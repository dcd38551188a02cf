from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from sbir.estimators.base import ConditionalEstimator, as_rows
from sbir.estimators.embedding import EmbeddingNet
from sbir.numerics import autograd as ag
from sbir.numerics.autograd import Tensor
from sbir.numerics.layers import MLP


class RatioClassifier(ConditionalEstimator):
    """Feedforward classifier on ``[theta, x]`` returning one logit per row.

    The output layer starts at zero, so a fresh classifier has logit 0.
    """

    kind = "classifier"

    def __init__(
        self,
        theta_dim: int,
        context_dim: int,
        hidden: Sequence[int] = (50, 50),
        activation: str = "tanh",
        seed: int = 0,
        embedding: EmbeddingNet | None = None,
    ):
        super().__init__(context_dim, embedding)
        self.theta_dim = int(theta_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation, self.seed = activation, int(seed)
        rng = np.random.default_rng(seed)
        self.net = self.add_module(
            "net", MLP(self.theta_dim + self.context_dim, self.hidden, 1, rng, activation)
        )

    def config(self) -> dict[str, Any]:
        return {
            "theta_dim": self.theta_dim,
            "context_dim": self.context_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "seed": self.seed,
        }

    def logit_tensor(self, theta, context) -> Tensor:
        inp = ag.concat([ag.tensor(theta), self._context(context)], axis=1)
        return ag.reshape(self.net(inp), (-1,))

    def logit(self, theta, context) -> np.ndarray:
        theta = as_rows(theta, self.theta_dim, "theta")
        context = as_rows(context, self.input_dim, "context")
        if context.shape[0] == 1 and theta.shape[0] > 1:
            context = np.repeat(context, theta.shape[0], axis=0)
        return self.logit_tensor(theta, context).value


def classifier_logit(model: RatioClassifier, theta, context) -> np.ndarray:
    return model.logit(theta, context)
