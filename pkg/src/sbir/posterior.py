"""Trained posteriors: sampling, density evaluation, checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from sbir.distributions import Prior, prior_from_dict, support_contains
from sbir.estimators import ConditionalEstimator, estimator_from_config
from sbir.harness import Standardizer
from sbir.samplers import SamplerConfig, SamplerResult, rejection_within_support, run_mcmc

SCHEMA_VERSION = 1
FORMAT_NAME = "sbir-posterior"
FAMILIES = ("direct", "likelihood", "ratio")
LEAKAGE_SAMPLES = 10_000


class NormalizationError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class SchemaVersionError(CheckpointError):
    def __init__(self, found: int, supported: int):
        self.found, self.supported = found, supported
        super().__init__(f"checkpoint schema version {found} is newer than supported version {supported}")


class NeuralPosterior:
    """Posterior over parameters given an observation.

    ``family`` decides how it is evaluated and sampled:

    * ``direct``: the estimator models ``q(theta | x)``. Sampling draws from the
      estimator and rejects draws outside the prior support; ``log_prob`` is
      normalized by the fraction of estimator mass inside the support.
    * ``likelihood``: the estimator models ``q(x | theta)``; the unnormalized
      target is ``log q(x | theta) + log p(theta)``, sampled by MCMC.
    * ``ratio``: the estimator is a classifier whose logit approximates the
      log likelihood-to-evidence ratio; target ``logit + log p(theta)``.

    Estimators operate on standardized parameters and data; this class does
    the conversion and the Jacobian bookkeeping.
    """

    def __init__(
        self,
        family: str,
        estimator: ConditionalEstimator,
        prior: Prior,
        x_standardizer: Standardizer,
        theta_standardizer: Standardizer,
        x_o=None,
        sampler: SamplerConfig | None = None,
        acceptance: float | None = None,
        leakage_seed: int = 0,
    ):
        if family not in FAMILIES:
            raise ValueError(f"unknown posterior family {family!r}")
        self.family = family
        self.estimator = estimator
        self.prior = prior
        self.x_standardizer = x_standardizer
        self.theta_standardizer = theta_standardizer
        self.sampler = sampler or SamplerConfig()
        self.leakage_seed = int(leakage_seed)
        self.last_diagnostics: SamplerResult | None = None
        self._acceptance_cache: dict[bytes, float] = {}
        self.x_o = None if x_o is None else self._check_x(x_o)
        if family == "direct" and self.x_o is not None:
            if acceptance is None:
                acceptance = self._estimate_acceptance(self.x_o)
            self._acceptance_cache[self.x_o.tobytes()] = float(acceptance)

    @property
    def dim(self) -> int:
        return self.prior.dim

    @property
    def embedding(self):
        return self.estimator.embedding

    @property
    def acceptance(self) -> float | None:
        if self.family != "direct" or self.x_o is None:
            return None
        return self._acceptance_cache[self.x_o.tobytes()]

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size != self.x_standardizer.dim:
            raise ValueError(f"observation has {x.size} entries, expected {self.x_standardizer.dim}")
        return x

    def _obs(self, x) -> np.ndarray:
        if x is None:
            if self.x_o is None:
                raise ValueError("no observation given and no default observation set")
            return self.x_o
        return self._check_x(x)

    def set_default_x(self, x) -> "NeuralPosterior":
        self.x_o = self._check_x(x)
        if self.family == "direct":
            self._acceptance(self.x_o)
        return self

    # -- direct family -------------------------------------------------------

    def _direct_draw(self, x_std: np.ndarray):
        def draw(n: int, rng: np.random.Generator) -> np.ndarray:
            z = self.estimator.sample(n, x_std[None, :], rng)
            return self.theta_standardizer.inverse(z)

        return draw

    def _estimate_acceptance(self, x: np.ndarray) -> float:
        if not self.prior.support.is_bounded:
            return 1.0
        rng = np.random.default_rng(self.leakage_seed)
        draw = self._direct_draw(self.x_standardizer.transform(x))(LEAKAGE_SAMPLES, rng)
        rate = float(np.mean(support_contains(self.prior.support, draw)))
        # at least one in-support draw is needed for a finite correction
        return max(rate, 1.0 / LEAKAGE_SAMPLES)

    def _acceptance(self, x: np.ndarray) -> float:
        key = x.tobytes()
        if key not in self._acceptance_cache:
            self._acceptance_cache[key] = self._estimate_acceptance(x)
        return self._acceptance_cache[key]

    # -- evaluation ------------------------------------------------------------

    def raw_log_prob(self, theta, x=None) -> np.ndarray:
        """Estimator-based log density in parameter units, before any
        support truncation or leakage correction (direct family only)."""
        x = self._obs(x)
        theta = np.asarray(theta, dtype=np.float64).reshape(-1, self.dim)
        xs = self.x_standardizer.transform(x)[None, :]
        ts = self.theta_standardizer.transform(theta)
        return self.estimator.log_prob(ts, xs) + self.theta_standardizer.log_abs_det

    def log_target(self, theta, x=None) -> np.ndarray:
        """Unnormalized log posterior used for MCMC (likelihood/ratio families)."""
        x = self._obs(x)
        theta = np.asarray(theta, dtype=np.float64).reshape(-1, self.dim)
        lp = self.prior.log_prob(theta)
        out = np.full(theta.shape[0], -np.inf)
        ok = np.isfinite(lp)
        if not ok.any():
            return out
        ts = self.theta_standardizer.transform(theta[ok])
        xs = self.x_standardizer.transform(x)[None, :]
        if self.family == "likelihood":
            ll = self.estimator.log_prob(np.repeat(xs, ts.shape[0], axis=0), ts)
            ll = ll + self.x_standardizer.log_abs_det
        else:
            ll = self.estimator.logit(ts, xs)
        out[ok] = ll + lp[ok]
        return out

    def log_prob(self, theta, x=None, strict: bool = False) -> tuple[np.ndarray, bool]:
        """Log posterior density and whether it is normalized.

        Raises:
            NormalizationError: with ``strict=True`` for families whose
                density is only known up to a constant.
        """
        if self.family != "direct":
            if strict:
                raise NormalizationError(
                    f"the {self.family} family only provides an unnormalized log density"
                )
            return self.log_target(theta, x), False
        x = self._obs(x)
        theta = np.asarray(theta, dtype=np.float64).reshape(-1, self.dim)
        raw = self.raw_log_prob(theta, x) - np.log(self._acceptance(x))
        inside = support_contains(self.prior.support, theta)
        return np.where(inside, raw, -np.inf), True

    # -- sampling ---------------------------------------------------------------

    def sample(self, n: int, x=None, seed=0) -> np.ndarray:
        """``n`` posterior draws, all inside the prior support."""
        x = self._obs(x)
        if n <= 0:
            return np.zeros((0, self.dim))
        if self.family == "direct":
            rng = np.random.default_rng(seed)
            draw = self._direct_draw(self.x_standardizer.transform(x))
            samples, _ = rejection_within_support(draw, self.prior.support, n, rng)
            return samples
        result = run_mcmc(lambda th: self.log_target(th, x), self.prior, n, self.sampler, seed)
        self.last_diagnostics = result
        return result.samples

    # -- persistence ------------------------------------------------------------

    def to_payload(self) -> dict[str, Any]:
        weights = {
            k: {"shape": list(v.shape), "data": v.ravel().tolist()}
            for k, v in self.estimator.state_dict().items()
        }
        return {
            "family": self.family,
            "prior": self.prior.to_dict(),
            "estimator": self.estimator.full_config(),
            "weights": weights,
            "x_standardizer": self.x_standardizer.to_dict(),
            "theta_standardizer": self.theta_standardizer.to_dict(),
            "x_o": None if self.x_o is None else self.x_o.tolist(),
            "sampler": self.sampler.to_dict(),
            "acceptance": self.acceptance,
            "leakage_seed": self.leakage_seed,
        }

    @classmethod
    def from_payload(cls, p: dict[str, Any]) -> "NeuralPosterior":
        est = estimator_from_config(p["estimator"])
        est.load_state_dict(
            {k: np.asarray(w["data"], dtype=np.float64).reshape(w["shape"]) for k, w in p["weights"].items()}
        )
        return cls(
            p["family"],
            est,
            prior_from_dict(p["prior"]),
            Standardizer.from_dict(p["x_standardizer"]),
            Standardizer.from_dict(p["theta_standardizer"]),
            x_o=p["x_o"],
            sampler=SamplerConfig(**p["sampler"]),
            acceptance=p["acceptance"],
            leakage_seed=p["leakage_seed"],
        )


def _digest(payload_text: str) -> str:
    return hashlib.sha256(payload_text.encode("utf-8")).hexdigest()


def save_posterior(posterior: NeuralPosterior, path) -> Path:
    """Write a checkpoint atomically (temp file + rename)."""
    path = Path(path)
    payload_text = json.dumps(posterior.to_payload(), sort_keys=True)
    doc = (
        '{"format": "%s", "schema_version": %d, "sha256": "%s", "payload": %s}\n'
        % (FORMAT_NAME, SCHEMA_VERSION, _digest(payload_text), payload_text)
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(doc)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_posterior(path) -> NeuralPosterior:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path} is not a posterior checkpoint")
    version = doc.get("schema_version")
    if not isinstance(version, int):
        raise CheckpointError(f"checkpoint {path} has no schema version")
    if version > SCHEMA_VERSION:
        raise SchemaVersionError(version, SCHEMA_VERSION)
    payload = doc.get("payload")
    if _digest(json.dumps(payload, sort_keys=True)) != doc.get("sha256"):
        raise CheckpointError(f"corrupted checkpoint {path}: checksum mismatch")
    try:
        return NeuralPosterior.from_payload(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from exc


def write_log_prob_csv(dest, theta, values, normalized: bool, names: Sequence[str] | None = None):
    """Write ``theta`` columns, ``log_prob`` and ``normalized`` to a path or open file."""
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    names = list(names) if names else [f"theta_{i}" for i in range(theta.shape[1])]

    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "log_prob", "normalized"])
        for row, v in zip(theta, values):
            w.writerow([*(repr(float(t)) for t in row), repr(float(v)), str(bool(normalized)).lower()])

    if hasattr(dest, "write"):
        emit(dest)
    else:
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            emit(fh)


def posterior_sample(p: NeuralPosterior, n: int, x=None, seed=0) -> np.ndarray:
    return p.sample(n, x, seed)


def posterior_log_prob(p: NeuralPosterior, theta, x=None, strict: bool = False):
    return p.log_prob(theta, x, strict)
