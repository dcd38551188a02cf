import numpy as np
import pytest


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at flat ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-4):
    """Per-coordinate |a - b| / max(|a|, |b|, floor)."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def randomize(model, rng, scale=0.3):
    """Perturb every parameter so zero-initialized heads become non-trivial."""
    model.set_flat(model.get_flat() + scale * rng.standard_normal(model.num_params))
    return model


def batch_means_se(x, n_batches=50):
    """Monte-Carlo standard error of the mean of a correlated series (batch means)."""
    x = np.asarray(x)
    b = np.array_split(x, n_batches)
    means = np.array([c.mean(axis=0) for c in b])
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance criterion bookkeeping ----------------------------------------------

_CRITERIA: dict[int, list[tuple[str, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = int(marker.args[0])
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA.setdefault(n, []).append((item.name, "passed" if rep.passed else rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        ok = all(r == "passed" for _, r in results)
        failed = [name for name, r in results if r != "passed"]
        detail = f"{len(results)} check(s)" if ok else "failed: " + ", ".join(failed)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  ({detail})")
