"""``sbir`` command line: full runs, simulation dumps, sampling, evaluation.

Exit codes: 0 success, 2 usage or configuration error, 3 strict-mode
normalization violation, 4 runtime inference failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from sbir.config import ConfigError, RunConfig, load_config
from sbir.engines import rejection_abc, run_inference
from sbir.harness import SimulationError, simulate_batch
from sbir.posterior import (
    CheckpointError,
    NormalizationError,
    load_posterior,
    save_posterior,
    write_log_prob_csv,
)
from sbir.samplers import SamplerError

log = logging.getLogger("sbir")

EXIT_OK, EXIT_USAGE, EXIT_CONTRACT, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(Exception):
    pass


def write_samples_csv(path: Path, samples: np.ndarray, names: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names))
        for row in np.atleast_2d(samples).reshape(-1, len(names)):
            w.writerow([repr(float(v)) for v in row])


def read_theta_csv(path: Path, dim: int) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise UsageError(f"{path} is empty")
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        theta = np.array([[float(v) for v in r[:dim]] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from exc
    if rows and any(len(r) < dim for r in rows):
        raise UsageError(f"{path}: expected {dim} columns")
    return theta.reshape(-1, dim)


def _theta_names(n: int) -> list[str]:
    return [f"theta_{i}" for i in range(n)]


def _parse_x(text: str | None):
    if text is None:
        return None
    try:
        return np.array([float(v) for v in text.replace(",", " ").split()])
    except ValueError as exc:
        raise UsageError(f"--x must be a list of numbers: {exc}") from exc


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.inference = dataclasses.replace(cfg.inference, seed=args.seed)
    if getattr(args, "out", None):
        cfg.out = Path(args.out)
    return cfg


def cmd_full(args) -> int:
    cfg = _config(args)
    if cfg.x_o is None:
        raise ConfigError("observation", "an observation is required for 'full'")
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    sim = cfg.make_simulator(args.workers)
    report: dict = {
        "config": cfg.raw | {"seed": cfg.seed},
        "algorithm": cfg.inference.algorithm,
        "seconds": {},
        "artifacts": [],
    }
    t0 = time.perf_counter()
    if cfg.inference.algorithm == "abc":
        n_sims = cfg.inference.simulations
        samples, threshold = rejection_abc(
            cfg.prior, sim, cfg.x_o, n_sims, cfg.inference.accept_quantile, seed=cfg.seed
        )
        report["abc"] = {"simulations": n_sims, "accepted": int(samples.shape[0]), "threshold": threshold}
        report["seconds"]["inference"] = time.perf_counter() - t0
    else:
        rounds: list = []
        posterior = run_inference(cfg.prior, sim, cfg.x_o, cfg.inference, rounds)
        report["rounds"] = rounds
        report["seconds"]["inference"] = time.perf_counter() - t0
        ckpt = out / "posterior.json"
        save_posterior(posterior, ckpt)
        report["artifacts"].append(str(ckpt))
        t0 = time.perf_counter()
        seed = np.random.SeedSequence([cfg.seed, 0x5A])
        samples = posterior.sample(cfg.num_samples, seed=seed)
        report["seconds"]["sample"] = time.perf_counter() - t0
        if posterior.last_diagnostics is not None:
            report["sampler"] = posterior.last_diagnostics.diagnostics.to_dict()
        if posterior.acceptance is not None:
            report["leakage_acceptance"] = posterior.acceptance
    path = out / "samples.csv"
    write_samples_csv(path, samples, cfg.names)
    report["artifacts"].append(str(out / "samples.csv"))
    report["artifacts"].append(str(out / "report.json"))
    (out / "report.json").write_text(json.dumps(report, indent=2, default=str) + "\n", encoding="utf-8")
    print(out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.n is None or args.n < 0:
        raise UsageError("simulate requires --n >= 0")
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    sim = cfg.make_simulator(args.workers)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x51]))
    theta = cfg.prior.sample(args.n, rng) if args.n else np.zeros((0, cfg.prior.dim))
    x, mask = simulate_batch(sim, theta, seed=cfg.seed, round_index=1)
    path = out / "simulations.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(theta.shape[0]):
            rec = {
                "id": i,
                "theta": theta[i].tolist(),
                "x": x[i].tolist() if mask.valid[i] else None,
                "valid": bool(mask.valid[i]),
                "reason": mask.reason[i],
            }
            fh.write(json.dumps(rec) + "\n")
    print(path)
    return EXIT_OK


def _checkpoint_path(args) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    if args.config:
        # --out names the result file here, not the run directory
        return load_config(args.config).out / "posterior.json"
    raise UsageError("give --checkpoint or --config")


def _load(args):
    path = _checkpoint_path(args)
    if not path.exists():
        raise UsageError(f"checkpoint not found: {path}")
    return load_posterior(path)


def cmd_sample(args) -> int:
    if args.n is None or args.n < 0:
        raise UsageError("sample requires --n >= 0")
    post = _load(args)
    samples = post.sample(args.n, _parse_x(args.x), seed=args.seed if args.seed is not None else 0)
    names = _theta_names(post.dim)
    if args.out:
        write_samples_csv(Path(args.out), samples, names)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(names)
        for row in samples:
            w.writerow([repr(float(v)) for v in row])
    return EXIT_OK


def cmd_logprob(args) -> int:
    if not args.theta:
        raise UsageError("logprob requires --theta CSV")
    post = _load(args)
    theta = read_theta_csv(Path(args.theta), post.dim)
    values, normalized = post.log_prob(theta, _parse_x(args.x), strict=args.strict)
    target = args.out or sys.stdout
    write_log_prob_csv(target, theta, values, normalized, _theta_names(post.dim))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sbir", description="simulation-based inference runs")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required):
        p.add_argument("--config", required=config_required, help="run-config TOML file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--strict", action="store_true", help="fail on unnormalized densities")
        p.add_argument("--out", default=None)

    p = sub.add_parser("full", help="run inference end to end")
    common(p, True)
    p.set_defaults(fn=cmd_full)
    p = sub.add_parser("simulate", help="dump prior simulations as JSON lines")
    common(p, True)
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(fn=cmd_simulate)
    p = sub.add_parser("sample", help="draw posterior samples from a checkpoint")
    common(p, False)
    p.add_argument("--checkpoint")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x", help="observation, comma separated (default: stored x_o)")
    p.set_defaults(fn=cmd_sample)
    p = sub.add_parser("logprob", help="evaluate the posterior density at parameters")
    common(p, False)
    p.add_argument("--checkpoint")
    p.add_argument("--theta", help="CSV of parameter rows")
    p.add_argument("--x", help="observation, comma separated (default: stored x_o)")
    p.set_defaults(fn=cmd_logprob)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NormalizationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, SimulationError, SamplerError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
