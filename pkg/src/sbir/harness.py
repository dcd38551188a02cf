"""Running simulators: shape inference, batching, parallelism, failure masks.

Every simulation row either yields a finite output vector or is marked invalid
with a reason code; failures never raise unless the whole batch is lost.
"""

from __future__ import annotations

import inspect
import json
import logging
import queue
import shutil
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from sbir.distributions import Prior

log = logging.getLogger(__name__)

NAN, INF, PROTOCOL, TIMEOUT = "nan", "inf", "protocol-error", "timeout"
REASONS = (NAN, INF, PROTOCOL, TIMEOUT)
PROTOCOL_VERSION = 1


class SimulationError(RuntimeError):
    pass


@dataclass
class ValidityMask:
    valid: np.ndarray
    reason: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        if not self.reason:
            self.reason = ["" if v else PROTOCOL for v in self.valid]
        if len(self.reason) != self.valid.size:
            raise ValueError("reason list length must equal mask length")

    def __len__(self) -> int:
        return self.valid.size

    def counts(self) -> dict[str, int]:
        out = {"valid": int(self.valid.sum())}
        for r in REASONS:
            out[r] = sum(1 for x in self.reason if x == r)
        return out


def row_seed(master_seed: int, round_index: int, row: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(round_index), int(row)])


def _classify(out, dim: int | None) -> tuple[np.ndarray | None, str]:
    """Validate one raw output; returns (vector, "") or (None, reason)."""
    if isinstance(out, str):
        return None, out
    try:
        x = np.atleast_1d(np.asarray(out, dtype=np.float64)).ravel()
    except (TypeError, ValueError):
        return None, PROTOCOL
    if dim is not None and x.size != dim:
        return None, PROTOCOL
    if np.any(np.isnan(x)):
        return None, NAN
    if np.any(np.isinf(x)):
        return None, INF
    return x, ""


class Simulator:
    """Black-box simulator ``theta -> x``.

    Args:
        fn: In-process callable. Per-row form: ``fn(theta_row)`` or
            ``fn(theta_row, rng)``. With ``batched=True`` it receives the whole
            ``(n, D)`` batch (and one rng) and must return ``(n, N)``.
        theta_dim: Parameter dimension D.
        batched: Whether ``fn`` is vectorized.
        workers: Parallel workers for per-row simulators.
    """

    kind = "in-process"

    def __init__(self, fn: Callable, theta_dim: int, batched: bool = False, workers: int = 1):
        self.fn = fn
        self.theta_dim = int(theta_dim)
        self.batched = bool(batched)
        self.workers = max(1, int(workers))
        self.output_dim: int | None = None
        try:
            n_args = len(inspect.signature(fn).parameters)
        except (TypeError, ValueError):
            n_args = 1
        self.takes_rng = n_args >= 2

    def run_rows(self, theta: np.ndarray, seed: int, round_index: int) -> list:
        """Raw per-row outputs (arrays) or reason strings, in input order."""
        n = theta.shape[0]
        if self.batched:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(round_index)]))
            try:
                out = self.fn(theta, rng) if self.takes_rng else self.fn(theta)
            except Exception as exc:
                raise SimulationError(f"batched simulator failed on the whole batch: {exc}") from exc
            out = np.asarray(out, dtype=np.float64)
            if out.ndim == 1:
                out = out.reshape(n, -1)
            if out.shape[0] != n:
                raise SimulationError(f"batched simulator returned {out.shape[0]} rows for {n} inputs")
            return list(out)
        jobs = [(theta[i], (int(seed), int(round_index), i)) for i in range(n)]
        if self.workers == 1 or n < 2:
            return [_run_row(self.fn, t, s, self.takes_rng) for t, s in jobs]
        from joblib import Parallel, delayed

        try:
            return Parallel(n_jobs=self.workers, backend="loky")(
                delayed(_run_row)(self.fn, t, s, self.takes_rng) for t, s in jobs
            )
        except Exception as exc:
            raise SimulationError(f"worker pool failed: {exc}") from exc


def _run_row(fn, theta_row, seed_words, takes_rng):
    try:
        if takes_rng:
            rng = np.random.default_rng(np.random.SeedSequence(list(seed_words)))
            return fn(theta_row, rng)
        return fn(theta_row)
    except Exception:
        log.debug("simulator raised on row %s", seed_words, exc_info=True)
        return PROTOCOL


def _check_theta(sim, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 1:
        theta = theta.reshape(-1, sim.theta_dim)
    if theta.ndim != 2 or theta.shape[1] != sim.theta_dim:
        raise ValueError(f"theta must have {sim.theta_dim} columns, got shape {theta.shape}")
    return theta


def simulate_batch(sim, theta, seed: int = 0, round_index: int = 0) -> tuple[np.ndarray, ValidityMask]:
    """Simulate every row of ``theta``.

    Invalid rows are returned as NaN rows with a reason in the mask. If the
    output dimension is still unknown, the first valid row fixes it.
    """
    theta = _check_theta(sim, theta)
    n = theta.shape[0]
    raw = sim.run_rows(theta, seed, round_index)
    rows, reasons = [], []
    for out in raw:
        x, why = _classify(out, sim.output_dim)
        if x is not None and sim.output_dim is None:
            sim.output_dim = x.size
        rows.append(x)
        reasons.append(why)
    dim = sim.output_dim
    if dim is None:
        if n == 0:
            return np.zeros((0, 0)), ValidityMask(np.zeros(0, bool), [])
        # nothing valid and no pilot yet: report all rows as failed
        dim = 1
    xs = np.full((n, dim), np.nan)
    for i, x in enumerate(rows):
        if x is not None and x.size == dim:
            xs[i] = x
        elif x is not None:
            reasons[i] = PROTOCOL
    valid = np.array([r == "" for r in reasons], dtype=bool)
    return xs, ValidityMask(valid, reasons)


def infer_shapes(sim, prior: Prior, seed: int = 0, max_tries: int = 10) -> tuple[int, int]:
    """Pilot-simulate prior draws until one succeeds; fixes the output dimension."""
    if prior.dim != sim.theta_dim:
        raise ValueError(f"prior dim {prior.dim} != simulator theta dim {sim.theta_dim}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA11CE]))
    for attempt in range(max_tries):
        theta = prior.sample(1, rng)
        # round 0 is reserved for pilots; inference rounds start at 1
        raw = sim.run_rows(theta, seed, 0)[0]
        x, why = _classify(raw, None)
        if x is not None:
            sim.output_dim = x.size
            return sim.theta_dim, x.size
        log.info("pilot simulation %d failed (%s)", attempt, why)
    raise SimulationError(f"pilot simulation failed on {max_tries} prior draws")


class Standardizer:
    """Per-dimension z-scoring with population standard deviation.

    Dimensions with std below ``floor`` get scale 1 and are flagged constant.
    """

    def __init__(self, mean, scale, constant=None):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        if np.any(self.scale <= 0):
            raise ValueError("scales must be positive")
        self.constant = (
            np.zeros(self.mean.size, bool) if constant is None else np.asarray(constant, bool)
        )

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, x, mask: ValidityMask | np.ndarray | None = None, floor: float = 1e-13):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if mask is not None:
            valid = mask.valid if isinstance(mask, ValidityMask) else np.asarray(mask, bool)
            x = x[valid]
        if x.shape[0] < 2:
            raise ValueError("standardizer needs at least 2 valid rows")
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        constant = std < floor
        return cls(mean, np.where(constant, 1.0, std), constant)

    @property
    def dim(self) -> int:
        return self.mean.size

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.scale + self.mean

    @property
    def log_abs_det(self) -> float:
        """log |d transform / dx|."""
        return -float(np.sum(np.log(self.scale)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Standardizer":
        return cls(d["mean"], d["scale"], d.get("constant"))


def standardizer_fit(x, mask=None) -> Standardizer:
    return Standardizer.fit(x, mask)


# -- external simulators ---------------------------------------------------------


class _Channel:
    """One external simulator process, one request in flight at a time."""

    def __init__(self, command: Sequence[str], startup_timeout: float):
        self.command = list(command)
        self.startup_timeout = startup_timeout
        self.proc: subprocess.Popen | None = None
        self.lines: queue.Queue = queue.Queue()

    def start(self) -> None:
        self.lines = queue.Queue()
        self.proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        threading.Thread(target=self._pump, args=(self.proc, self.lines), daemon=True).start()
        line = self._next_line(time.monotonic() + self.startup_timeout)
        try:
            hello = json.loads(line) if line is not None else None
        except json.JSONDecodeError:
            hello = None
        if not isinstance(hello, dict) or hello.get("protocol") != PROTOCOL_VERSION:
            self.stop()
            raise SimulationError(f"bad handshake from {self.command[0]!r}: {line!r}")

    @staticmethod
    def _pump(proc, lines):
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def _next_line(self, deadline: float) -> str | None:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise TimeoutError
        try:
            return self.lines.get(timeout=remaining)
        except queue.Empty:
            raise TimeoutError from None

    def stop(self) -> None:
        if self.proc is not None:
            try:
                self.proc.kill()
                self.proc.wait(timeout=5)
            except Exception:
                pass
            for stream in (self.proc.stdin, self.proc.stdout):
                try:
                    stream.close()
                except Exception:
                    pass
            self.proc = None

    def restart(self) -> None:
        self.stop()
        self.start()

    def request(self, row_id: int, theta_row: np.ndarray, timeout: float):
        if self.proc is None:
            self.start()
        msg = json.dumps({"id": row_id, "theta": [float(t) for t in theta_row]})
        try:
            self.proc.stdin.write(msg + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            self.restart()
            return PROTOCOL
        deadline = time.monotonic() + timeout
        while True:
            try:
                line = self._next_line(deadline)
            except TimeoutError:
                self.restart()
                return TIMEOUT
            if line is None:
                self.restart()
                return PROTOCOL
            try:
                reply = json.loads(line)
                rid = reply["id"]
            except (json.JSONDecodeError, TypeError, KeyError):
                self.restart()
                return PROTOCOL
            if rid != row_id:
                # late reply to an earlier, already failed request
                continue
            if "x" in reply:
                return reply["x"]
            return PROTOCOL


class ExternalSimulator:
    """Simulator running as a separate process speaking line-delimited JSON.

    Each worker owns one process. A timed out or malformed row fails alone and
    the process is restarted before the next row.
    """

    kind = "external-process"
    batched = False

    def __init__(
        self,
        command: Sequence[str],
        theta_dim: int,
        timeout: float = 10.0,
        workers: int = 1,
        startup_timeout: float = 30.0,
    ):
        command = [str(c) for c in command]
        if not command or shutil.which(command[0]) is None:
            raise FileNotFoundError(f"simulator executable not found: {command[:1]}")
        self.command = command
        self.theta_dim = int(theta_dim)
        self.timeout = float(timeout)
        self.workers = max(1, int(workers))
        self.startup_timeout = float(startup_timeout)
        self.output_dim: int | None = None

    def run_rows(self, theta: np.ndarray, seed: int = 0, round_index: int = 0) -> list:
        n = theta.shape[0]
        out: list = [PROTOCOL] * n
        chunks = [c for c in np.array_split(np.arange(n), min(self.workers, max(n, 1))) if c.size]

        def work(idx):
            ch = _Channel(self.command, self.startup_timeout)
            try:
                for i in idx:
                    out[i] = ch.request(int(i), theta[i], self.timeout)
            finally:
                ch.stop()

        try:
            if len(chunks) <= 1:
                for c in chunks:
                    work(c)
            else:
                with ThreadPoolExecutor(len(chunks)) as pool:
                    list(pool.map(work, chunks))
        except SimulationError:
            raise
        except OSError as exc:
            raise SimulationError(f"external simulator failed: {exc}") from exc
        return out


def external_simulate(command, theta, timeout: float = 10.0, workers: int = 1):
    theta = np.asarray(theta, dtype=np.float64)
    sim = ExternalSimulator(command, theta.shape[1], timeout=timeout, workers=workers)
    return simulate_batch(sim, theta)
