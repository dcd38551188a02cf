import json

import numpy as np
import pytest
from scipy.integrate import trapezoid

from conftest import randomize
from sbir.distributions import BoxUniform, DiagonalGaussian, support_contains
from sbir.estimators import ConditionalMAF, MixtureDensityNet, RatioClassifier
from sbir.harness import Standardizer
from sbir.posterior import (
    CheckpointError,
    NeuralPosterior,
    NormalizationError,
    SchemaVersionError,
    load_posterior,
    posterior_log_prob,
    posterior_sample,
    save_posterior,
    write_log_prob_csv,
)
from sbir.samplers import SamplerConfig

FAST = SamplerConfig(burn_in=30)


def direct(prior, d=1, c=1, seed=0, estimator="maf"):
    rng = np.random.default_rng(seed)
    if estimator == "maf":
        est = ConditionalMAF(d, c, n_flows=2, hidden=(8, 8), seed=seed)
    else:
        est = MixtureDensityNet(d, c, n_components=3, hidden=(8, 8), seed=seed)
    randomize(est, rng, 0.2)
    xs = Standardizer(np.full(c, 0.5), np.full(c, 2.0))
    ts = Standardizer(np.full(d, 0.1), np.full(d, 0.7))
    return NeuralPosterior("direct", est, prior, xs, ts, x_o=np.ones(c))


def likelihood(prior, seed=0):
    est = randomize(ConditionalMAF(2, 2, n_flows=2, hidden=(8, 8), seed=seed), np.random.default_rng(seed), 0.2)
    return NeuralPosterior("likelihood", est, prior, Standardizer.identity(2), Standardizer.identity(2), x_o=[1.0, -1.0], sampler=FAST)


def ratio(prior, seed=0):
    est = randomize(RatioClassifier(2, 2, hidden=(8, 8), seed=seed), np.random.default_rng(seed), 0.2)
    return NeuralPosterior("ratio", est, prior, Standardizer.identity(2), Standardizer.identity(2), x_o=[1.0, -1.0], sampler=FAST)


def test_outside_support_is_minus_inf():
    p = direct(BoxUniform([-1.0], [1.0]))
    lp, normalized = p.log_prob(np.array([[-1.5], [0.0], [2.0]]))
    assert normalized and np.isneginf(lp[[0, 2]]).all() and np.isfinite(lp[1])


def test_unbounded_prior_matches_raw():
    p = direct(DiagonalGaussian([0.0], [1.0]))
    assert p.acceptance == 1.0
    th = np.linspace(-3, 3, 11)[:, None]
    np.testing.assert_array_equal(p.log_prob(th)[0], p.raw_log_prob(th))
    # samples are raw estimator samples
    np.testing.assert_array_equal(p.sample(50, seed=4), p._direct_draw(p.x_standardizer.transform(p.x_o))(50, np.random.default_rng(4)))


def test_leakage_is_constant_shift():
    p = direct(BoxUniform([-0.2], [0.6]))
    assert 0 < p.acceptance < 1
    th = np.linspace(-0.19, 0.59, 40)[:, None]
    diff = p.log_prob(th)[0] - p.raw_log_prob(th)
    np.testing.assert_allclose(diff, -np.log(p.acceptance), rtol=0, atol=1e-12)


@pytest.mark.parametrize("estimator", ["maf", "mdn"])
@pytest.mark.parametrize("box", [(-0.3, 0.5), (-5.0, 5.0)])
def test_quadrature_normalization_1d(estimator, box):
    p = direct(BoxUniform([box[0]], [box[1]]), estimator=estimator, seed=3)
    grid = np.linspace(box[0], box[1], 4001)
    mass = trapezoid(np.exp(p.log_prob(grid[:, None])[0]), grid)
    assert abs(mass - 1) < 5e-2


def test_quadrature_normalization_2d():
    p = direct(BoxUniform([-0.5, -0.5], [0.8, 0.8]), d=2, c=1, seed=2)
    g = np.linspace(-0.5, 0.8, 301)
    a, b = np.meshgrid(g, g, indexing="ij")
    dens = np.exp(p.log_prob(np.column_stack([a.ravel(), b.ravel()]))[0]).reshape(a.shape)
    mass = trapezoid(trapezoid(dens, g, axis=1), g)
    assert abs(mass - 1) < 5e-2


def test_direct_samples_inside_support():
    prior = BoxUniform([-0.3, 0.0], [0.4, 0.2])
    p = direct(prior, d=2, seed=1)
    s = posterior_sample(p, 500, seed=1)
    assert s.shape == (500, 2) and support_contains(prior.support, s).all()


@pytest.mark.parametrize("make", [likelihood, ratio])
def test_mcmc_families_unnormalized_and_in_support(make):
    prior = BoxUniform([-2.0, -2.0], [2.0, 2.0])
    p = make(prior)
    vals, normalized = posterior_log_prob(p, np.array([[0.0, 0.0], [3.0, 0.0]]))
    assert not normalized and np.isfinite(vals[0]) and np.isneginf(vals[1])
    with pytest.raises(NormalizationError, match=p.family):
        p.log_prob(np.zeros((1, 2)), strict=True)
    s = p.sample(200, seed=2)
    assert s.shape == (200, 2) and support_contains(prior.support, s).all()
    assert p.last_diagnostics is not None


@pytest.mark.parametrize("make", [lambda: direct(BoxUniform([-1.0], [1.0])), likelihood, ratio])
def test_zero_samples(make):
    p = make() if make.__code__.co_argcount == 0 else make(BoxUniform([-2.0, -2.0], [2.0, 2.0]))
    assert p.sample(0).shape == (0, p.dim)


def test_no_observation_errors():
    p = direct(DiagonalGaussian([0.0], [1.0]))
    p.x_o = None
    with pytest.raises(ValueError, match="observation"):
        p.sample(3)
    with pytest.raises(ValueError):
        p.log_prob(np.zeros((1, 1)), x=[1.0, 2.0])


def probe(d):
    g = np.linspace(-1.5, 1.5, 10)
    if d == 1:
        return g[:, None]
    a, b = np.meshgrid(g, g)
    return np.column_stack([a.ravel(), b.ravel()])


@pytest.mark.parametrize(
    "make",
    [
        lambda: direct(BoxUniform([-1.0, -1.0], [1.0, 1.0]), d=2, estimator="mdn"),
        lambda: likelihood(DiagonalGaussian([0.0, 0.0], [1.0, 1.0])),
        lambda: ratio(BoxUniform([-2.0, -2.0], [2.0, 2.0])),
    ],
)
def test_save_load_exact(make, tmp_path):
    p = make()
    path = save_posterior(p, tmp_path / "post.json")
    q = load_posterior(path)
    grid = probe(2)
    assert grid.shape == (100, 2)
    a, b = p.log_prob(grid)[0], q.log_prob(grid)[0]
    assert a.tobytes() == b.tobytes()
    assert p.sample(40, seed=5).tobytes() == q.sample(40, seed=5).tobytes()
    assert q.acceptance == p.acceptance
    assert not list(tmp_path.glob("*.tmp"))


def test_mdn_roundtrip_1d(tmp_path):
    p = direct(BoxUniform([-1.0], [1.0]), estimator="mdn")
    q = load_posterior(save_posterior(p, tmp_path / "p.json"))
    assert p.log_prob(probe(1))[0].tobytes() == q.log_prob(probe(1))[0].tobytes()


def test_newer_schema_refused(tmp_path):
    path = save_posterior(direct(BoxUniform([-1.0], [1.0])), tmp_path / "p.json")
    doc = json.loads(path.read_text())
    doc["schema_version"] += 1
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaVersionError) as err:
        load_posterior(path)
    assert "2" in str(err.value) and "1" in str(err.value)


def test_truncated_and_tampered(tmp_path):
    path = save_posterior(direct(BoxUniform([-1.0], [1.0])), tmp_path / "p.json")
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError, match="corrupted"):
        load_posterior(path)
    path.write_text(text.replace('"family": "direct"', '"family": "ratio"'))
    with pytest.raises(CheckpointError, match="checksum"):
        load_posterior(path)
    path.write_text("[]")
    with pytest.raises(CheckpointError):
        load_posterior(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_posterior(tmp_path / "nope.json")


def test_log_prob_csv(tmp_path):
    out = tmp_path / "lp.csv"
    write_log_prob_csv(out, [[0.5], [2.0]], [-1.25, -np.inf], True)
    assert out.read_text().splitlines() == ["theta_0,log_prob,normalized", "0.5,-1.25,true", "2.0,-inf,true"]


def test_acceptance_cached_per_observation():
    p = direct(BoxUniform([-0.2], [0.6]))
    th = np.array([[0.1]])
    a = p.log_prob(th, x=[3.0])[0]
    assert a.tobytes() == p.log_prob(th, x=[3.0])[0].tobytes()
    assert len(p._acceptance_cache) == 2
