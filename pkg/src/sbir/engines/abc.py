from __future__ import annotations

import math

import numpy as np

from sbir.distributions import Prior
from sbir.harness import Standardizer, simulate_batch


class ABCError(RuntimeError):
    pass


def abc_select(theta, x, valid, x_o, accept_quantile: float) -> tuple[np.ndarray, float]:
    """Keep the ``ceil(q * n_valid)`` valid rows closest to ``x_o`` after z-scoring."""
    if not 0 < accept_quantile <= 1:
        raise ValueError("accept_quantile must be in (0, 1]")
    valid = np.asarray(valid, bool)
    if not valid.any():
        raise ABCError("all simulations are invalid")
    theta, x = np.asarray(theta)[valid], np.asarray(x)[valid]
    n_valid = theta.shape[0]
    if n_valid >= 2:
        st = Standardizer.fit(x)
    else:
        st = Standardizer.identity(x.shape[1])
    dist = np.linalg.norm(st.transform(x) - st.transform(np.reshape(x_o, (1, -1))), axis=1)
    k = min(n_valid, int(math.ceil(accept_quantile * n_valid - 1e-9)))
    order = np.argsort(dist, kind="stable")[:k]
    return theta[order], float(dist[order[-1]])


def rejection_abc(
    prior: Prior,
    simulator,
    x_o,
    n_sims: int,
    accept_quantile: float,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Rejection ABC with Euclidean distance on standardized outputs.

    Returns the accepted parameters (closest first) and the distance threshold.
    """
    if not 0 < accept_quantile <= 1:
        raise ValueError("accept_quantile must be in (0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xABC]))
    theta = prior.sample(n_sims, rng)
    x, mask = simulate_batch(simulator, theta, seed=seed, round_index=1)
    return abc_select(theta, x, mask.valid, x_o, accept_quantile)
