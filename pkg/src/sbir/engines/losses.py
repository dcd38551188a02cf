"""Batch losses for the three neural inference families."""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from sbir.estimators.base import DensityEstimator
from sbir.estimators.classifier import RatioClassifier
from sbir.numerics import autograd as ag
from sbir.numerics.autograd import Tensor

log = logging.getLogger(__name__)


def nll(model: DensityEstimator, event, context) -> Tensor:
    return -ag.mean(model.log_prob_tensor(event, context))


def atomic_loss_from_logits(logits) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[:, 0]``; column 0 is the true atom."""
    logits = ag.tensor(logits)
    return -ag.mean(logits[:, 0] - ag.logsumexp(logits, axis=1))


def draw_atoms(batch_size: int, n_atoms: int, rng: np.random.Generator) -> np.ndarray:
    """(B, M) indices: column 0 is the row itself, the rest are distinct other rows."""
    if n_atoms < 2:
        raise ValueError("need at least 2 atoms")
    if n_atoms > batch_size:
        raise ValueError(f"number of atoms ({n_atoms}) exceeds batch size ({batch_size})")
    others = rng.random((batch_size, batch_size - 1)).argsort(axis=1)[:, : n_atoms - 1]
    rows = np.arange(batch_size)[:, None]
    others = others + (others >= rows)
    return np.concatenate([np.broadcast_to(rows, (batch_size, 1)), others], axis=1)


def snpe_loss(
    model: DensityEstimator,
    theta: np.ndarray,
    x: np.ndarray,
    proposal: np.ndarray,
    round_index: int,
    n_atoms: int,
    prior_log_prob: Callable[[np.ndarray], np.ndarray],
    rng: np.random.Generator,
) -> Tensor:
    """Posterior-estimation loss.

    In round 1 this is the plain negative log likelihood. In later rounds
    rows tagged as proposal draws use the atomic loss, contrasting the true
    parameter against ``n_atoms - 1`` others from the batch under the
    prior-divided density ``q(theta|x) / p(theta)``; untagged rows keep the NLL.
    """
    if round_index < 1:
        raise ValueError("round index starts at 1")
    proposal = np.asarray(proposal, bool)
    if round_index == 1 or not proposal.any():
        return nll(model, theta, x)
    b = theta.shape[0]
    atoms = draw_atoms(b, n_atoms, rng)
    rows = np.flatnonzero(proposal)
    sub = atoms[rows]
    lq_all = model.log_prob_tensor(theta[np.concatenate([np.arange(b), sub[:, 1:].ravel()])],
                                   np.concatenate([x, np.repeat(x[rows], n_atoms - 1, axis=0)]))
    own = ag.take(lq_all, slice(0, b))
    others = ag.reshape(ag.take(lq_all, slice(b, None)), (rows.size, n_atoms - 1))
    lq = ag.concat([ag.reshape(ag.take(own, rows), (rows.size, 1)), others], axis=1)
    lp = np.asarray(prior_log_prob(theta), dtype=np.float64)[sub]
    excluded = ~np.isfinite(lp)
    excluded[:, 0] = False
    if excluded.any():
        log.warning("excluding %d atom(s) with -inf prior log probability", int(excluded.sum()))
    logits = lq + np.where(excluded, -np.inf, -np.where(np.isfinite(lp), lp, 0.0))
    atomic = ag.sum_(-(ag.take(logits, (slice(None), 0)) - ag.logsumexp(logits, axis=1)))
    plain = ~proposal
    total = atomic
    if plain.any():
        total = total + ag.sum_(-ag.take(own, np.flatnonzero(plain)))
    return total * (1.0 / b)


def snle_loss(model: DensityEstimator, theta: np.ndarray, x: np.ndarray) -> Tensor:
    """Mean ``-log q(x | theta)``."""
    return nll(model, x, theta)


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation with no fixed points (n >= 2)."""
    if n < 2:
        raise ValueError("derangement needs n >= 2")
    ar = np.arange(n)
    while True:
        p = rng.permutation(n)
        if not np.any(p == ar):
            return p


def snre_loss(
    model: RatioClassifier,
    theta: np.ndarray,
    x: np.ndarray,
    n_contrastive: int,
    rng: np.random.Generator,
) -> Tensor:
    """Balanced binary cross-entropy: joint pairs vs ``K`` mismatched pairs per row.

    Mismatched pairs pair ``x_i`` with ``theta_{pi(i)}`` for a random
    within-batch derangement ``pi``. A classifier with logit 0 scores log 2.
    """
    b = theta.shape[0]
    if b < n_contrastive + 1:
        raise ValueError(f"batch of {b} rows too small for {n_contrastive} contrastive pairs")
    perms = [derangement(b, rng) for _ in range(n_contrastive)]
    th = np.concatenate([theta] + [theta[p] for p in perms], axis=0)
    xs = np.concatenate([x] * (n_contrastive + 1), axis=0)
    logits = model.logit_tensor(th, xs)
    joint = ag.mean(ag.softplus(-logits[:b]))
    marginal = ag.mean(ag.softplus(logits[b:]))
    return (joint + marginal) * 0.5
