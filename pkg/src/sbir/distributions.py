"""Priors over parameters with explicit, closed supports."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Support:
    """Axis-aligned closed box; bounds may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("support bounds must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("support lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, dim: int) -> "Support":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def is_bounded(self) -> bool:
        return bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))

    def contains(self, theta) -> np.ndarray:
        return support_contains(self, theta)


def _as_batch(theta, dim: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 1:
        theta = theta[None, :] if dim > 1 or theta.size == 1 else theta[:, None]
    if theta.ndim != 2 or theta.shape[1] != dim:
        raise ValueError(f"expected parameters of dimension {dim}, got shape {theta.shape}")
    return theta


def support_contains(support: Support, theta) -> np.ndarray:
    theta = _as_batch(theta, support.dim)
    return np.all((theta >= support.lower) & (theta <= support.upper), axis=1)


class Prior:
    kind: str = ""
    dim: int

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def log_prob(self, theta) -> np.ndarray:
        raise NotImplementedError

    @property
    def support(self) -> Support:
        return Support.unbounded(self.dim)

    @property
    def mean(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def std(self) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


class BoxUniform(Prior):
    kind = "uniform-box"

    def __init__(self, low, high):
        self.low = np.atleast_1d(np.asarray(low, dtype=np.float64))
        self.high = np.atleast_1d(np.asarray(high, dtype=np.float64))
        if self.low.shape != self.high.shape:
            raise ValueError("low and high must have the same length")
        if not np.all(self.low < self.high):
            raise ValueError("uniform prior requires low < high in every dimension")
        if not (np.all(np.isfinite(self.low)) and np.all(np.isfinite(self.high))):
            raise ValueError("uniform prior bounds must be finite")
        self.dim = self.low.size
        self._log_density = -float(np.sum(np.log(self.high - self.low)))

    def sample(self, n, rng):
        return rng.uniform(self.low, self.high, size=(n, self.dim))

    def log_prob(self, theta):
        theta = _as_batch(theta, self.dim)
        inside = support_contains(self.support, theta)
        return np.where(inside, self._log_density, -np.inf)

    @property
    def support(self):
        return Support(self.low, self.high)

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def std(self):
        return (self.high - self.low) / np.sqrt(12.0)

    def to_dict(self):
        return {"kind": self.kind, "low": self.low.tolist(), "high": self.high.tolist()}


class DiagonalGaussian(Prior):
    kind = "diagonal-gaussian"

    def __init__(self, mean, std):
        self._mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self._std = np.broadcast_to(np.asarray(std, dtype=np.float64), self._mean.shape).copy()
        if not np.all(self._std > 0):
            raise ValueError("standard deviations must be positive")
        self.dim = self._mean.size
        self._norm = -0.5 * self.dim * LOG_2PI - float(np.sum(np.log(self._std)))

    def sample(self, n, rng):
        return self._mean + self._std * rng.standard_normal((n, self.dim))

    def log_prob(self, theta):
        z = (_as_batch(theta, self.dim) - self._mean) / self._std
        return self._norm - 0.5 * np.sum(z * z, axis=1)

    @property
    def mean(self):
        return self._mean.copy()

    @property
    def std(self):
        return self._std.copy()

    def to_dict(self):
        return {"kind": self.kind, "mean": self._mean.tolist(), "std": self._std.tolist()}


class Gaussian(Prior):
    """Full-covariance Gaussian; the Cholesky factor is computed once."""

    kind = "full-gaussian"

    def __init__(self, mean, cov):
        self._mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        self.dim = self._mean.size
        if cov.shape != (self.dim, self.dim):
            raise ValueError(f"covariance must be {self.dim}x{self.dim}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        try:
            self._chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        self.cov = cov
        self._norm = -0.5 * self.dim * LOG_2PI - float(np.sum(np.log(np.diag(self._chol))))

    def sample(self, n, rng):
        return self._mean + rng.standard_normal((n, self.dim)) @ self._chol.T

    def log_prob(self, theta):
        from scipy.linalg import solve_triangular

        d = _as_batch(theta, self.dim) - self._mean
        z = solve_triangular(self._chol, d.T, lower=True)
        return self._norm - 0.5 * np.sum(z * z, axis=0)

    @property
    def mean(self):
        return self._mean.copy()

    @property
    def std(self):
        return np.sqrt(np.diag(self.cov))

    def to_dict(self):
        return {"kind": self.kind, "mean": self._mean.tolist(), "cov": self.cov.tolist()}


def prior_sample(prior: Prior, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return prior.sample(n, rng)


def prior_log_prob(prior: Prior, theta) -> np.ndarray:
    return prior.log_prob(theta)


def prior_from_dict(spec: dict[str, Any]) -> Prior:
    """Build a prior from a ``kind`` plus its parameters.

    Accepted kinds: ``uniform-box`` (low, high), ``diagonal-gaussian``
    (mean, std), ``full-gaussian`` (mean, cov). An optional ``dim`` broadcasts
    scalar parameters and is checked against list-valued ones.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    dim = spec.pop("dim", None)
    spec.pop("names", None)

    def vec(key, default=None):
        if key not in spec:
            if default is None:
                raise ValueError(f"prior kind {kind!r} requires {key!r}")
            val = default
        else:
            val = spec.pop(key)
        arr = np.atleast_1d(np.asarray(val, dtype=np.float64))
        if dim is not None:
            if arr.size == 1:
                arr = np.full(int(dim), float(arr[0]))
            elif arr.size != dim:
                raise ValueError(f"prior {key!r} has length {arr.size}, expected dim={dim}")
        return arr

    if kind == "uniform-box":
        prior: Prior = BoxUniform(vec("low"), vec("high"))
    elif kind == "diagonal-gaussian":
        prior = DiagonalGaussian(vec("mean", 0.0), vec("std", 1.0))
    elif kind == "full-gaussian":
        mean = vec("mean")
        if "cov" not in spec:
            raise ValueError("prior kind 'full-gaussian' requires 'cov'")
        prior = Gaussian(mean, spec.pop("cov"))
    else:
        raise ValueError(f"unknown prior kind {kind!r}")
    if spec:
        raise ValueError(f"unknown prior keys: {sorted(spec)}")
    return prior
