"""Reference tasks, builtin simulators and analytic / quadrature oracles."""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy.integrate import trapezoid

from sbir.distributions import BoxUniform, DiagonalGaussian, Prior
from sbir.harness import Simulator

TWO_MOONS_ORACLE = "two_moons_oracle.csv"


# -- oracles ----------------------------------------------------------------------


def analytic_gaussian_posterior(prior_mean, prior_cov, noise_cov, x_o) -> tuple[np.ndarray, np.ndarray]:
    """Posterior of ``theta ~ N(m, S)``, ``x | theta ~ N(theta, N)`` at ``x_o``."""
    m = np.atleast_1d(np.asarray(prior_mean, dtype=np.float64))
    s = np.atleast_2d(np.asarray(prior_cov, dtype=np.float64))
    nc = np.atleast_2d(np.asarray(noise_cov, dtype=np.float64))
    x_o = np.atleast_1d(np.asarray(x_o, dtype=np.float64))
    s_inv, n_inv = np.linalg.inv(s), np.linalg.inv(nc)
    cov = np.linalg.inv(s_inv + n_inv)
    cov = 0.5 * (cov + cov.T)
    return cov @ (s_inv @ m + n_inv @ x_o), cov


def grid_posterior_1d(
    prior_log_prob: Callable[[np.ndarray], np.ndarray],
    likelihood: Callable[[np.ndarray], np.ndarray],
    grid: np.ndarray,
) -> np.ndarray:
    """Prior times likelihood on ``grid``, trapezoid-normalized.

    ``likelihood`` maps grid points to likelihood values at the fixed observation.
    """
    grid = np.asarray(grid, dtype=np.float64)
    dens = np.exp(prior_log_prob(grid)) * np.asarray(likelihood(grid), dtype=np.float64)
    dens = np.where(np.isfinite(dens), dens, 0.0)
    z = trapezoid(dens, grid)
    if not z > 0:
        raise ValueError("no posterior mass on the grid")
    return dens / z


def grid_moments(grid, density) -> tuple[float, float]:
    mean = float(trapezoid(grid * density, grid))
    var = float(trapezoid((grid - mean) ** 2 * density, grid))
    return mean, float(np.sqrt(var))


# -- builtin simulators ----------------------------------------------------------------


def identity(theta):
    return np.asarray(theta, dtype=np.float64).copy()


def gaussian_noise(noise_std: float = 0.5):
    def sim(theta, rng):
        theta = np.asarray(theta, dtype=np.float64)
        return theta + noise_std * rng.standard_normal(theta.shape)

    return sim


def nan_below_zero(noise_std: float = 0.5):
    """Gaussian-noise simulator that fails (NaN) whenever ``theta[0] < 0``."""

    def sim(theta, rng):
        theta = np.asarray(theta, dtype=np.float64)
        x = theta + noise_std * rng.standard_normal(theta.shape)
        return np.full_like(x, np.nan) if theta[0] < 0 else x

    return sim


def two_moons_batch(theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized two-moons simulator; bimodal posterior in ``sign(theta1 + theta2)``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    n = theta.shape[0]
    a = rng.uniform(-np.pi / 2, np.pi / 2, n)
    r = 0.1 + 0.01 * rng.standard_normal(n)
    px = r * np.cos(a) + 0.25
    py = r * np.sin(a)
    s = np.sqrt(0.5)
    return np.stack(
        [px - np.abs(theta[:, 0] + theta[:, 1]) * s, py + (-theta[:, 0] + theta[:, 1]) * s], axis=1
    )


def two_moons(theta, rng):
    return two_moons_batch(np.asarray(theta)[None, :], rng)[0]


BUILTINS: dict[str, Callable[..., Callable]] = {
    "identity": lambda: identity,
    "identity-gaussian": gaussian_noise,
    "nan-below-zero": nan_below_zero,
    "two-moons": lambda: two_moons,
}


def builtin_simulator(name: str, theta_dim: int, workers: int = 1, **params: Any) -> Simulator:
    if name not in BUILTINS:
        raise KeyError(f"unknown builtin simulator {name!r}; available: {sorted(BUILTINS)}")
    return Simulator(BUILTINS[name](**params), theta_dim, workers=workers)


# -- reference tasks ------------------------------------------------------------------------


@dataclass
class ReferenceTask:
    name: str
    prior: Prior
    make_simulator: Callable[..., Simulator]
    x_o: np.ndarray
    oracle: str
    posterior_mean: np.ndarray | None = None
    posterior_cov: np.ndarray | None = None


def conjugate_gaussian_task(x_o=(1.0, -1.0), noise_std: float = 0.5) -> ReferenceTask:
    d = len(x_o)
    prior = DiagonalGaussian(np.zeros(d), np.ones(d))
    mean, cov = analytic_gaussian_posterior(np.zeros(d), np.eye(d), noise_std**2 * np.eye(d), x_o)
    return ReferenceTask(
        "conjugate-gaussian",
        prior,
        lambda workers=1: builtin_simulator("identity-gaussian", d, workers, noise_std=noise_std),
        np.asarray(x_o, dtype=np.float64),
        "analytic-gaussian",
        mean,
        cov,
    )


def two_moons_task() -> ReferenceTask:
    return ReferenceTask(
        "two-moons",
        BoxUniform([-1.0, -1.0], [1.0, 1.0]),
        lambda workers=1: builtin_simulator("two-moons", 2, workers),
        np.zeros(2),
        "abc-reference",
    )


def sufficient_statistic_task(
    raw_dim: int = 10, noise_std: float = 0.5, x_o: float = 1.0, obs_seed: int = 0
) -> ReferenceTask:
    """1-D theta; only the first of ``raw_dim`` outputs carries information.

    The uninformative entries of the observation are a fixed draw from their
    own distribution. Setting them to zero would put ``x_o`` far from the
    typical set of the noise and force the estimator to extrapolate.
    """
    prior = DiagonalGaussian([0.0], [1.0])

    def sim(theta, rng):
        x = rng.standard_normal(raw_dim)
        x[0] = theta[0] + noise_std * x[0]
        return x

    obs = np.random.default_rng(obs_seed).standard_normal(raw_dim)
    obs[0] = x_o
    mean, cov = analytic_gaussian_posterior([0.0], [[1.0]], [[noise_std**2]], [x_o])
    return ReferenceTask(
        "sufficient-statistic",
        prior,
        lambda workers=1: Simulator(sim, 1, workers=workers),
        obs,
        "analytic-gaussian",
        mean,
        cov,
    )


# -- frozen two-moons oracle --------------------------------------------------------------


def two_moons_mode(theta) -> np.ndarray:
    """Mode label 0/1 by the sign of ``theta1 + theta2``."""
    theta = np.atleast_2d(theta)
    return (theta[:, 0] + theta[:, 1] > 0).astype(int)


def generate_two_moons_oracle(n_sims: int = 1_000_000, quantile: float = 1e-3, seed: int = 2020):
    from sbir.engines.abc import abc_select

    task = two_moons_task()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xABC]))
    theta = task.prior.sample(n_sims, rng)
    x = two_moons_batch(theta, np.random.default_rng(np.random.SeedSequence([seed, 1])))
    samples, threshold = abc_select(theta, x, np.ones(n_sims, bool), task.x_o, quantile)
    return samples, threshold


def write_two_moons_oracle(path, n_sims=1_000_000, quantile=1e-3, seed=2020) -> Path:
    samples, threshold = generate_two_moons_oracle(n_sims, quantile, seed)
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# two-moons rejection-ABC reference posterior at x_o=(0,0)\n")
        fh.write(f"# seed={seed} n_sims={n_sims} quantile={quantile} threshold={float(threshold)!r}\n")
        fh.write(
            f"# generated by: python -m sbir.tasks freeze-two-moons --n-sims {n_sims} "
            f"--quantile {quantile} --seed {seed}\n"
        )
        fh.write("theta_0,theta_1,mode\n")
        for row, m in zip(samples, two_moons_mode(samples)):
            fh.write(f"{float(row[0])!r},{float(row[1])!r},{int(m)}\n")
    return path


def load_two_moons_oracle(path=None) -> tuple[np.ndarray, np.ndarray]:
    if path is None:
        text = resources.files("sbir.data").joinpath(TWO_MOONS_ORACLE).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = [l for l in text.splitlines() if l and not l.startswith("#")][1:]
    arr = np.array([[float(v) for v in l.split(",")] for l in rows])
    return arr[:, :2], arr[:, 2].astype(int)


def assign_modes(samples, oracle_samples, oracle_modes) -> np.ndarray:
    """Label each sample with the mode of its nearest oracle sample."""
    samples = np.atleast_2d(samples)
    d2 = ((samples[:, None, :] - oracle_samples[None, :, :]) ** 2).sum(axis=2)
    return oracle_modes[np.argmin(d2, axis=1)]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m sbir.tasks")
    sub = ap.add_subparsers(dest="cmd", required=True)
    fz = sub.add_parser("freeze-two-moons", help="regenerate the frozen two-moons oracle")
    fz.add_argument("--out", default=None)
    fz.add_argument("--n-sims", type=int, default=1_000_000)
    fz.add_argument("--quantile", type=float, default=1e-3)
    fz.add_argument("--seed", type=int, default=2020)
    args = ap.parse_args(argv)
    out = args.out or Path(__file__).parent / "data" / TWO_MOONS_ORACLE
    path = write_two_moons_oracle(out, args.n_sims, args.quantile, args.seed)
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
