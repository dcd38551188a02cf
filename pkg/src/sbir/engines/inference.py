"""Sequential neural inference: simulate, train, wrap in a posterior, repeat."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from sbir.distributions import Prior
from sbir.engines import losses
from sbir.engines.training import TrainConfig, train_estimator
from sbir.estimators import ConditionalMAF, EmbeddingNet, MixtureDensityNet, RatioClassifier
from sbir.harness import REASONS, Standardizer, infer_shapes, simulate_batch
from sbir.posterior import NeuralPosterior
from sbir.samplers import SamplerConfig

log = logging.getLogger(__name__)

ALGORITHMS = ("snpe-c", "snle", "snre", "abc")
FAMILY = {"snpe-c": "direct", "snle": "likelihood", "snre": "ratio"}
MAX_FAILURE_RATE = 0.5


class InferenceError(RuntimeError):
    pass


@dataclass
class InferenceConfig:
    algorithm: str = "snpe-c"
    rounds: int = 1
    simulations: int = 1000
    atoms: int = 10
    contrastive: int = 1
    estimator: str = "maf"
    hidden: tuple[int, ...] = (50, 50)
    n_flows: int = 5
    n_components: int = 10
    embedding_dim: int | None = None
    embedding_hidden: tuple[int, ...] = (50,)
    accept_quantile: float = 0.01
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.algorithm != "abc" and self.simulations < self.train.batch_size:
            raise ValueError("simulations per round must be >= batch size")
        if self.atoms < 2:
            raise ValueError("atoms must be >= 2")
        if self.contrastive < 1:
            raise ValueError("contrastive pairs must be >= 1")
        if self.estimator not in ("maf", "mdn"):
            raise ValueError(f"unknown density estimator {self.estimator!r}")
        self.hidden = tuple(self.hidden)
        self.embedding_hidden = tuple(self.embedding_hidden)


@dataclass
class RoundDataset:
    """All simulations so far; raw (unstandardized) values."""

    theta: np.ndarray
    x: np.ndarray
    valid: np.ndarray
    round: np.ndarray
    proposal: np.ndarray

    @classmethod
    def empty(cls, d: int, n: int) -> "RoundDataset":
        return cls(np.zeros((0, d)), np.zeros((0, n)), np.zeros(0, bool), np.zeros(0, int), np.zeros(0, bool))

    def append(self, theta, x, valid, round_index: int, proposal: bool) -> None:
        k = theta.shape[0]
        self.theta = np.concatenate([self.theta, theta])
        self.x = np.concatenate([self.x, x])
        self.valid = np.concatenate([self.valid, valid])
        self.round = np.concatenate([self.round, np.full(k, round_index)])
        self.proposal = np.concatenate([self.proposal, np.full(k, proposal)])

    def __len__(self) -> int:
        return self.theta.shape[0]


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def build_estimator(cfg: InferenceConfig, d: int, n: int, seed: int):
    family = FAMILY[cfg.algorithm]
    embedding = None
    ctx = n
    if cfg.embedding_dim is not None and family != "likelihood":
        embedding = EmbeddingNet(n, cfg.embedding_dim, cfg.embedding_hidden, seed=seed + 1)
        ctx = cfg.embedding_dim
    if family == "ratio":
        return RatioClassifier(d, ctx, cfg.hidden, seed=seed, embedding=embedding)
    event, context = (d, ctx) if family == "direct" else (n, d)
    if cfg.estimator == "maf":
        return ConditionalMAF(event, context, cfg.n_flows, cfg.hidden, seed=seed, embedding=embedding)
    return MixtureDensityNet(event, context, cfg.n_components, cfg.hidden, seed=seed, embedding=embedding)


def make_loss(cfg: InferenceConfig, theta_s, x_s, proposal, round_index, prior, theta_std):
    family = FAMILY[cfg.algorithm]
    if family == "direct":
        prior_lp = lambda t: prior.log_prob(theta_std.inverse(t))
        return lambda m, idx, rng: losses.snpe_loss(
            m, theta_s[idx], x_s[idx], proposal[idx], round_index, cfg.atoms, prior_lp, rng
        )
    if family == "likelihood":
        return lambda m, idx, rng: losses.snle_loss(m, theta_s[idx], x_s[idx])
    return lambda m, idx, rng: losses.snre_loss(m, theta_s[idx], x_s[idx], cfg.contrastive, rng)


def run_inference(
    prior: Prior,
    simulator,
    x_o,
    cfg: InferenceConfig,
    report: list[dict[str, Any]] | None = None,
) -> NeuralPosterior:
    """Run ``cfg.rounds`` rounds and return the final posterior.

    Round 1 simulates prior draws; later rounds draw from the current
    posterior at ``x_o``. Data from all rounds is reused. If ``report`` is a
    list, one dict per round (counts, training curves, timings) is appended.
    """
    if cfg.algorithm == "abc":
        raise ValueError("use rejection_abc for the abc algorithm")
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, *round_ss = ss.spawn(cfg.rounds + 1)
    if simulator.output_dim is None:
        infer_shapes(simulator, prior, seed=cfg.seed)
    d, n_x = prior.dim, simulator.output_dim
    x_o = np.asarray(x_o, dtype=np.float64).reshape(-1)
    if x_o.size != n_x:
        raise ValueError(f"observation has {x_o.size} entries but simulator outputs {n_x}")

    data = RoundDataset.empty(d, n_x)
    model = build_estimator(cfg, d, n_x, _int_seed(init_ss))
    family = FAMILY[cfg.algorithm]
    posterior = None
    x_std = theta_std = None
    for r in range(1, cfg.rounds + 1):
        prop_ss, train_ss, post_ss = round_ss[r - 1].spawn(3)
        t0 = time.perf_counter()
        if posterior is None:
            theta = prior.sample(cfg.simulations, np.random.default_rng(prop_ss))
        else:
            theta = posterior.sample(cfg.simulations, x_o, seed=prop_ss)
        t_propose = time.perf_counter() - t0

        t0 = time.perf_counter()
        x, mask = simulate_batch(simulator, theta, seed=cfg.seed, round_index=r)
        t_sim = time.perf_counter() - t0
        fail_rate = 1.0 - mask.valid.mean()
        if fail_rate > MAX_FAILURE_RATE:
            raise InferenceError(f"round {r}: {fail_rate:.0%} of simulations failed")
        data.append(theta, x, mask.valid, r, proposal=posterior is not None)

        if x_std is None:
            x_std = Standardizer.fit(data.x, data.valid)
            theta_std = Standardizer.fit(data.theta, data.valid)
        theta_s = theta_std.transform(data.theta)
        # invalid rows carry NaN; replace so nothing non-finite is ever indexed into a loss
        x_s = np.where(data.valid[:, None], x_std.transform(data.x), 0.0)
        loss = make_loss(cfg, theta_s, x_s, data.proposal, r, prior, theta_std)

        t0 = time.perf_counter()
        try:
            model, train_report = train_estimator(
                model, data.valid, loss, cfg.train, np.random.default_rng(train_ss)
            )
        except Exception as exc:
            raise InferenceError(f"round {r}: training failed: {exc}") from exc
        t_train = time.perf_counter() - t0
        posterior = NeuralPosterior(
            family, model, prior, x_std, theta_std, x_o=x_o, sampler=cfg.sampler,
            leakage_seed=_int_seed(post_ss),
        )
        counts = mask.counts()
        log.info("round %d: %d valid / %d simulations, %d epochs", r, counts["valid"], len(mask), train_report.epochs)
        if report is not None:
            report.append(
                {
                    "round": r,
                    "requested": int(len(mask)),
                    "valid": counts["valid"],
                    "invalid": {k: counts[k] for k in REASONS},
                    "training": train_report.to_dict(),
                    "seconds": {"propose": t_propose, "simulate": t_sim, "train": t_train},
                }
            )
    return posterior
