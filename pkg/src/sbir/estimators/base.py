from __future__ import annotations

from typing import Any

import numpy as np

from sbir.estimators.embedding import EmbeddingNet
from sbir.numerics import autograd as ag
from sbir.numerics.autograd import Tensor
from sbir.numerics.module import Module


def as_rows(a, dim: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1) if a.size == dim else a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[1] != dim:
        raise ValueError(f"{name} must have {dim} columns, got shape {a.shape}")
    return a


class ConditionalEstimator(Module):
    """Common plumbing: optional embedding of the conditioning input.

    ``context_dim`` is the width the estimator core sees; ``input_dim`` is the
    width callers pass (raw width when an embedding is attached).
    """

    kind = ""

    def __init__(self, context_dim: int, embedding: EmbeddingNet | None):
        super().__init__()
        self.context_dim = int(context_dim)
        self.embedding = embedding
        if embedding is not None:
            if embedding.out_dim != self.context_dim:
                raise ValueError(
                    f"embedding output dim {embedding.out_dim} != context dim {self.context_dim}"
                )
            self.add_module("embedding", embedding)

    @property
    def input_dim(self) -> int:
        return self.embedding.raw_dim if self.embedding is not None else self.context_dim

    def _context(self, context) -> Tensor:
        if isinstance(context, Tensor):
            c = context
        else:
            c = ag.tensor(as_rows(context, self.input_dim, "context"))
        if self.embedding is not None:
            c = self.embedding(c)
        return c

    def config(self) -> dict[str, Any]:
        raise NotImplementedError

    def full_config(self) -> dict[str, Any]:
        cfg = {"kind": self.kind, **self.config()}
        cfg["embedding"] = None if self.embedding is None else self.embedding.config()
        return cfg


class DensityEstimator(ConditionalEstimator):
    """Conditional density q(event | context)."""

    event_dim: int

    def log_prob_tensor(self, event, context) -> Tensor:
        raise NotImplementedError

    def log_prob(self, event, context) -> np.ndarray:
        event = as_rows(event, self.event_dim, "event")
        context = as_rows(context, self.input_dim, "context")
        if context.shape[0] == 1 and event.shape[0] > 1:
            context = np.repeat(context, event.shape[0], axis=0)
        return self.log_prob_tensor(event, context).value

    def sample(self, n: int, context, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError
