"""MCMC and rejection samplers over unnormalized log densities.

Chains advance in lockstep so the target is evaluated on all chains in one
batched call, but each chain draws from its own RNG stream; a chain's output
depends only on its own stream, never on how many chains run next to it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from sbir.distributions import Prior, Support, support_contains

log = logging.getLogger(__name__)

MAX_STEP_OUT = 1_000_000


class SamplerError(RuntimeError):
    pass


class LogTarget:
    """Batched log density wrapper that maps NaN to -inf and counts it."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int):
        self.fn = fn
        self.dim = int(dim)
        self.nan_count = 0

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1, self.dim)
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            out = np.asarray(self.fn(theta), dtype=np.float64).reshape(-1)
        nan = np.isnan(out)
        if nan.any():
            self.nan_count += int(nan.sum())
            log.warning("log target returned NaN for %d point(s); treated as -inf", int(nan.sum()))
            out = np.where(nan, -np.inf, out)
        return out


def _as_target(target, dim: int | None = None) -> LogTarget:
    if isinstance(target, LogTarget):
        return target
    if dim is None:
        raise ValueError("dimension required for a plain callable target")
    return LogTarget(target, dim)


@dataclass
class Diagnostics:
    accepted: int
    proposed: int
    rhat: list[float]
    ess: list[float]
    nan_count: int = 0
    evaluations: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "proposed": self.proposed,
            "acceptance_rate": self.acceptance_rate,
            "rhat": self.rhat,
            "ess": self.ess,
            "nan_count": self.nan_count,
            "evaluations": self.evaluations,
        }


@dataclass
class SamplerResult:
    samples: np.ndarray          # pooled, chain-major
    chains: np.ndarray           # (n_chains, n_per_chain, D)
    diagnostics: Diagnostics


def chain_rngs(seed, n_chains: int) -> list[np.random.Generator]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(n_chains)]


def _prepare(target, init, n_chains):
    init = np.atleast_2d(np.asarray(init, dtype=np.float64))
    if init.shape[0] != n_chains:
        raise ValueError(f"init has {init.shape[0]} rows, expected n_chains={n_chains}")
    t = _as_target(target, init.shape[1])
    lp = t(init)
    if not np.all(np.isfinite(lp)):
        raise SamplerError(
            "initial points have non-finite log target; initialize chains with "
            "resample_init() or from points inside the support"
        )
    return t, init.copy(), lp


def _finish(chains: np.ndarray, n_samples: int, acc, prop, t: LogTarget, evals: int) -> SamplerResult:
    pooled = chains.reshape(-1, chains.shape[-1])[:n_samples]
    if chains.shape[0] >= 2 and chains.shape[1] >= 4:
        rhat = split_rhat(chains).tolist()
    else:
        rhat = [float("nan")] * chains.shape[-1]
    ess = effective_sample_size(chains).tolist() if chains.shape[1] >= 4 else [float("nan")] * chains.shape[-1]
    return SamplerResult(pooled, chains, Diagnostics(acc, prop, rhat, ess, t.nan_count, evals))


def slice_sample(
    target,
    init,
    n_samples: int,
    n_chains: int = 4,
    init_width=1.0,
    burn_in: int = 200,
    thin: int = 1,
    seed=0,
) -> SamplerResult:
    """Axis-aligned slice sampling with stepping out and shrinkage.

    ``n_samples`` is the pooled count; each chain yields
    ``ceil(n_samples / n_chains)`` draws and the pool is truncated.
    Every accepted point has a finite log target, so a proposal is counted as
    proposed once per coordinate update and always accepted.
    """
    t, x, lp = _prepare(target, init, n_chains)
    d = x.shape[1]
    width = np.broadcast_to(np.asarray(init_width, dtype=np.float64), (d,)).copy()
    if np.any(width <= 0):
        raise ValueError("init_width must be positive")
    rngs = chain_rngs(seed, n_chains)
    per_chain = -(-max(n_samples, 0) // n_chains)
    total = burn_in + per_chain * max(1, thin)
    chains = np.zeros((n_chains, per_chain, d))
    evals = 0
    k = 0
    for it in range(total):
        for j in range(d):
            log_y = lp + np.log([r.uniform() for r in rngs])
            left = x[:, j] - width[j] * np.array([r.uniform() for r in rngs])
            right = left + width[j]
            # stepping out, left then right, for chains still expanding
            for side in (0, 1):
                active = np.ones(n_chains, bool)
                steps = 0
                while active.any():
                    pts = x[active].copy()
                    pts[:, j] = left[active] if side == 0 else right[active]
                    vals = t(pts)
                    evals += pts.shape[0]
                    still = vals > log_y[active]
                    idx = np.flatnonzero(active)
                    if side == 0:
                        left[idx[still]] -= width[j]
                    else:
                        right[idx[still]] += width[j]
                    active[idx[~still]] = False
                    steps += 1
                    if steps > MAX_STEP_OUT:
                        raise SamplerError("slice stepping-out exceeded 1e6 expansions; target is improper")
            active = np.ones(n_chains, bool)
            new_x = x[:, j].copy()
            new_lp = lp.copy()
            while active.any():
                idx = np.flatnonzero(active)
                prop = np.array([rngs[c].uniform(left[c], right[c]) for c in idx])
                pts = x[idx].copy()
                pts[:, j] = prop
                vals = t(pts)
                evals += idx.size
                ok = vals > log_y[idx]
                new_x[idx[ok]] = prop[ok]
                new_lp[idx[ok]] = vals[ok]
                active[idx[ok]] = False
                bad = idx[~ok]
                below = prop[~ok] < x[bad, j]
                left[bad[below]] = prop[~ok][below]
                right[bad[~below]] = prop[~ok][~below]
            x[:, j] = new_x
            lp = new_lp
        if it >= burn_in and (it - burn_in) % max(1, thin) == 0 and k < per_chain:
            chains[:, k] = x
            k += 1
    n_updates = total * d * n_chains
    return _finish(chains, n_samples, n_updates, n_updates, t, evals)


def metropolis_hastings(
    target,
    init,
    n_samples: int,
    n_chains: int = 4,
    proposal_scale=1.0,
    thin: int = 1,
    burn_in: int = 200,
    seed=0,
) -> SamplerResult:
    """Gaussian random-walk Metropolis-Hastings over all coordinates jointly."""
    t, x, lp = _prepare(target, init, n_chains)
    d = x.shape[1]
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=np.float64), (d,)).copy()
    rngs = chain_rngs(seed, n_chains)
    per_chain = -(-max(n_samples, 0) // n_chains)
    total = burn_in + per_chain * max(1, thin)
    chains = np.zeros((n_chains, per_chain, d))
    accepted = proposed = evals = 0
    k = 0
    for it in range(total):
        noise = np.stack([r.standard_normal(d) for r in rngs])
        log_u = np.log([r.uniform() for r in rngs])
        prop = x + scale * noise
        lp_prop = t(prop)
        evals += n_chains
        ok = log_u < lp_prop - lp
        x[ok] = prop[ok]
        lp[ok] = lp_prop[ok]
        accepted += int(ok.sum())
        proposed += n_chains
        if it >= burn_in and (it - burn_in) % max(1, thin) == 0 and k < per_chain:
            chains[:, k] = x
            k += 1
    return _finish(chains, n_samples, accepted, proposed, t, evals)


def mh_accept(log_target_current: float, log_target_proposed: float, log_u: float) -> bool:
    """Acceptance rule for a symmetric proposal."""
    return log_u < log_target_proposed - log_target_current


def resample_init(target, prior: Prior, n_chains: int, pool: int = 1024, seed=0) -> np.ndarray:
    """Sampling-importance-resampling from prior draws, weights ∝ exp(log target)."""
    if pool < n_chains:
        raise ValueError("pool must be >= n_chains")
    rng = np.random.default_rng(seed)
    cand = prior.sample(pool, rng)
    lp = _as_target(target, prior.dim)(cand)
    finite = np.isfinite(lp)
    if not finite.any():
        raise SamplerError("all initialization candidates have -inf log target")
    lw = np.where(finite, lp, -np.inf)
    w = np.exp(lw - lw[finite].max())
    idx = rng.choice(pool, size=n_chains, replace=True, p=w / w.sum())
    return cand[idx]


def rejection_within_support(
    sampler: Callable[[int, np.random.Generator], np.ndarray],
    support: Support,
    n: int,
    rng: np.random.Generator,
    max_batches: int = 100,
    batch_size: int | None = None,
    min_acceptance: float = 1e-4,
) -> tuple[np.ndarray, float]:
    """Draw from ``sampler`` and keep rows inside ``support`` until ``n`` are kept.

    Returns the samples and the observed acceptance rate.
    """
    d = support.dim
    if n <= 0:
        return np.zeros((0, d)), 1.0
    if not support.is_bounded:
        return sampler(n, rng), 1.0
    batch_size = batch_size or max(n, 1000)
    kept, n_kept, n_drawn = [], 0, 0
    for _ in range(max_batches):
        draw = sampler(batch_size, rng)
        inside = support_contains(support, draw)
        kept.append(draw[inside])
        n_kept += int(inside.sum())
        n_drawn += draw.shape[0]
        if n_kept >= n:
            return np.concatenate(kept)[:n], n_kept / n_drawn
    rate = n_kept / n_drawn
    if rate < min_acceptance:
        raise SamplerError(
            f"only {rate:.2e} of estimator samples fall inside the prior support "
            f"(estimated leakage {1 - rate:.4f}) after {max_batches} batches"
        )
    raise SamplerError(f"collected {n_kept}/{n} samples inside support after {max_batches} batches")


def split_rhat(chains) -> np.ndarray:
    """Split-chain potential scale reduction, one value per dimension.

    ``chains`` is (n_chains, n_draws, D) or (n_chains, n_draws). Zero-variance
    input yields 1.0.
    """
    c = np.asarray(chains, dtype=np.float64)
    if c.ndim == 2:
        c = c[..., None]
    m, n, _ = c.shape
    if m < 2 or n < 4:
        raise ValueError("split_rhat needs >= 2 chains with >= 4 draws each")
    half = n // 2
    split = np.concatenate([c[:, :half], c[:, n - half:]], axis=0)
    n = half
    means = split.mean(axis=1)
    w = split.var(axis=1, ddof=1).mean(axis=0)
    b = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    out = np.ones(c.shape[2])
    pos = w > 0
    out[pos] = np.sqrt(var_plus[pos] / w[pos])
    out[~pos & (b > 0)] = np.inf
    return out


def effective_sample_size(chains) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation."""
    c = np.asarray(chains, dtype=np.float64)
    if c.ndim == 2:
        c = c[..., None]
    m, n, d = c.shape
    out = np.zeros(d)
    for j in range(d):
        x = c[:, :, j]
        xc = x - x.mean(axis=1, keepdims=True)
        f = np.fft.rfft(xc, n=2 * n, axis=1)
        acov = np.fft.irfft(f * np.conj(f), axis=1)[:, :n] / n
        w = acov[:, 0].mean() * n / (n - 1) if n > 1 else 0.0
        var_plus = w * (n - 1) / n
        if m > 1:
            var_plus += x.mean(axis=1).var(ddof=1)
        if var_plus <= 0:
            out[j] = m * n
            continue
        rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        total, prev = 0.0, np.inf
        for t in range(0, n - 1, 2):
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            pair = min(pair, prev)
            total += pair
            prev = pair
        tau = -1.0 + 2.0 * total
        out[j] = m * n / max(tau, 1.0 / np.log10(max(m * n, 10)))
    return out


@dataclass
class SamplerConfig:
    method: str = "slice"
    n_chains: int = 4
    burn_in: int = 200
    thin: int = 1
    init_pool: int = 1024
    init_width: list[float] | float | None = None
    proposal_scale: list[float] | float | None = None

    def __post_init__(self):
        if self.method not in ("slice", "mh"):
            raise ValueError(f"unknown sampler method {self.method!r}")
        if self.n_chains < 1 or self.thin < 1 or self.burn_in < 0:
            raise ValueError("invalid sampler configuration")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n_chains": self.n_chains,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "init_pool": self.init_pool,
            "init_width": self.init_width,
            "proposal_scale": self.proposal_scale,
        }


def run_mcmc(target, prior: Prior, n: int, cfg: SamplerConfig, seed) -> SamplerResult:
    """Initialize by SIR and run the configured sampler."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    init_ss, chain_ss = ss.spawn(2)
    t = _as_target(target, prior.dim)
    init = resample_init(t, prior, cfg.n_chains, cfg.init_pool, np.random.default_rng(init_ss))
    scale = prior.std
    scale = np.where(np.isfinite(scale), scale, 1.0)
    if cfg.method == "slice":
        width = scale if cfg.init_width is None else cfg.init_width
        return slice_sample(t, init, n, cfg.n_chains, width, cfg.burn_in, cfg.thin, chain_ss)
    prop = 0.5 * scale if cfg.proposal_scale is None else cfg.proposal_scale
    return metropolis_hastings(t, init, n, cfg.n_chains, prop, cfg.thin, cfg.burn_in, chain_ss)
