import numpy as np
import pytest
from scipy.stats import norm

from sbir.distributions import BoxUniform, DiagonalGaussian
from sbir.engines import abc as abc_mod
from sbir.engines.abc import ABCError, abc_select, rejection_abc
from sbir.engines.inference import InferenceConfig, InferenceError, run_inference
from sbir.engines.losses import nll, snle_loss, snpe_loss, snre_loss
from sbir.engines.training import TrainConfig, train_estimator
from sbir.estimators import ConditionalMAF, RatioClassifier
from sbir.harness import Simulator
from sbir.samplers import SamplerConfig
from sbir.tasks import builtin_simulator, conjugate_gaussian_task, sufficient_statistic_task

FAST_SAMPLER = SamplerConfig(burn_in=50)


def test_abc_quantile_one_returns_all():
    prior = DiagonalGaussian([0.0], [1.0])
    theta, thr = rejection_abc(prior, builtin_simulator("identity", 1), [0.0], 500, 1.0, seed=3)
    assert theta.shape == (500, 1)
    ref = prior.sample(500, np.random.default_rng(np.random.SeedSequence([3, 0xABC])))
    np.testing.assert_array_equal(np.sort(theta.ravel()), np.sort(ref.ravel()))


def test_abc_closest_tenth():
    theta = np.random.default_rng(0).standard_normal((1000, 1))
    kept, _ = abc_select(theta, theta, np.ones(1000, bool), [0.0], 0.1)
    expected = theta[np.argsort(np.abs(theta[:, 0]))[:100]]
    np.testing.assert_array_equal(kept, expected)


@pytest.mark.parametrize("q,n_valid", [(0.01, 997), (0.5, 3), (0.1, 10), (0.333, 1000), (1e-6, 50)])
def test_abc_count_is_ceiling(q, n_valid):
    rng = np.random.default_rng(1)
    theta = rng.standard_normal((n_valid + 20, 1))
    valid = np.zeros(n_valid + 20, bool)
    valid[:n_valid] = True
    x = np.where(valid[:, None], theta, np.nan)
    kept, _ = abc_select(theta, x, valid, [0.0], q)
    assert kept.shape[0] == int(np.ceil(q * n_valid - 1e-9))


def test_abc_errors():
    with pytest.raises(ABCError):
        abc_select(np.zeros((3, 1)), np.full((3, 1), np.nan), np.zeros(3, bool), [0.0], 0.5)
    with pytest.raises(ValueError):
        abc_select(np.zeros((3, 1)), np.zeros((3, 1)), np.ones(3, bool), [0.0], 0.0)


def test_abc_conjugate_mean():
    task = conjugate_gaussian_task()
    sim = Simulator(lambda t, rng: t + 0.5 * rng.standard_normal(t.shape), 2, batched=True)
    theta, _ = rejection_abc(task.prior, sim, task.x_o, 100_000, 0.01, seed=0)
    assert theta.shape == (1000, 2)
    assert np.all(np.abs(theta.mean(axis=0) - task.posterior_mean) < 0.1)


def test_snle_learns_gaussian_likelihood():
    rng = np.random.default_rng(0)
    theta = rng.uniform(-2, 2, (20_000, 1))
    x = theta + 0.5 * rng.standard_normal(theta.shape)
    m = ConditionalMAF(1, 1, n_flows=2, hidden=(50, 50), seed=1)
    loss = lambda mdl, idx, r: snle_loss(mdl, theta[idx], x[idx])
    train_estimator(m, np.ones(20_000, bool), loss, TrainConfig(batch_size=200, learning_rate=1e-3), rng)
    tg, xg = np.meshgrid(np.linspace(-1.5, 1.5, 7), np.linspace(-0.5, 0.5, 5))
    tg, xg = tg.reshape(-1, 1), (tg + xg).reshape(-1, 1)
    err = np.abs(m.log_prob(xg, tg) - norm.logpdf(xg[:, 0], tg[:, 0], 0.5))
    assert err.max() < 0.1


def test_snre_learns_gaussian_log_ratio():
    rng = np.random.default_rng(2)
    theta = rng.standard_normal((10_000, 1))
    x = theta + 0.5 * rng.standard_normal(theta.shape)
    m = RatioClassifier(1, 1, hidden=(30, 30), seed=3)
    loss = lambda mdl, idx, r: snre_loss(mdl, theta[idx], x[idx], 1, r)
    train_estimator(m, np.ones(10_000, bool), loss, TrainConfig(learning_rate=3e-3, patience=10), rng)
    probes = np.array([[-1.0, -0.8], [-0.5, -0.3], [0.0, 0.1], [0.5, 0.6], [1.0, 0.9]])
    truth = norm.logpdf(probes[:, 1], probes[:, 0], 0.5) - norm.logpdf(probes[:, 1], 0, np.sqrt(1.25))
    got = m.logit(probes[:, :1], probes[:, 1:])
    assert np.abs(got - truth).max() < 0.2


def test_snre_independent_data_plateaus_at_log2():
    rng = np.random.default_rng(4)
    theta, x = rng.standard_normal((4000, 1)), rng.standard_normal((4000, 1))
    m = RatioClassifier(1, 1, hidden=(30, 30), seed=5)
    loss = lambda mdl, idx, r: snre_loss(mdl, theta[idx], x[idx], 1, r)
    _, rep = train_estimator(m, np.ones(4000, bool), loss, TrainConfig(learning_rate=1e-3), rng)
    assert abs(rep.val_loss[rep.best_epoch - 1] - np.log(2)) < 0.02
    assert np.abs(m.logit(np.linspace(-2, 2, 9)[:, None], np.zeros((9, 1)))).max() < 0.2


def small_cfg(**kw):
    base = dict(
        algorithm="snpe-c", rounds=1, simulations=600, hidden=(16, 16), n_flows=2,
        seed=7, train=TrainConfig(max_epochs=20), sampler=FAST_SAMPLER,
    )
    base.update(kw)
    return InferenceConfig(**base)


@pytest.mark.parametrize("algorithm", ["snpe-c", "snle", "snre"])
def test_same_seed_same_posterior(algorithm):
    task = conjugate_gaussian_task()
    cfg = small_cfg(algorithm=algorithm, rounds=2)
    a = run_inference(task.prior, task.make_simulator(), task.x_o, cfg).sample(100, seed=1)
    b = run_inference(task.prior, task.make_simulator(), task.x_o, cfg).sample(100, seed=1)
    assert a.tobytes() == b.tobytes()


def test_single_round_uses_plain_nll(monkeypatch):
    seen = []
    real = snpe_loss

    def spy(model, theta, x, proposal, round_index, *a):
        seen.append((round_index, bool(np.any(proposal))))
        return real(model, theta, x, proposal, round_index, *a)

    monkeypatch.setattr("sbir.engines.losses.snpe_loss", spy)
    task = conjugate_gaussian_task()
    report = []
    run_inference(task.prior, task.make_simulator(), task.x_o, small_cfg(), report)
    assert seen and all(r == 1 and not tagged for r, tagged in seen)
    assert len(report) == 1 and report[0]["requested"] == 600


def test_too_many_failures_errors():
    prior = DiagonalGaussian([-0.3], [1.0])  # about 62% of draws fail
    with pytest.raises(InferenceError, match="failed"):
        run_inference(prior, builtin_simulator("nan-below-zero", 1), [0.5], small_cfg())


def test_invalid_rows_never_reach_losses(monkeypatch):
    real = nll

    def guarded(model, event, context):
        assert np.all(np.isfinite(event)) and np.all(np.isfinite(context))
        return real(model, event, context)

    monkeypatch.setattr("sbir.engines.losses.nll", guarded)
    prior = DiagonalGaussian([0.5, 0.0], [1.0, 1.0])
    report = []
    posterior = run_inference(prior, builtin_simulator("nan-below-zero", 2), [1.0, 0.0], small_cfg(), report)
    r = report[0]
    assert r["valid"] + sum(r["invalid"].values()) == r["requested"]
    assert 0.2 < r["invalid"]["nan"] / r["requested"] < 0.4
    assert np.isfinite(posterior.log_prob(np.zeros((1, 2)))[0]).all()


def test_abc_algorithm_not_for_run_inference():
    task = conjugate_gaussian_task()
    with pytest.raises(ValueError):
        run_inference(task.prior, task.make_simulator(), task.x_o, small_cfg(algorithm="abc"))


@pytest.mark.parametrize(
    "kw",
    [dict(algorithm="snpe"), dict(rounds=0), dict(simulations=10), dict(atoms=1), dict(contrastive=0), dict(estimator="nsf")],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        small_cfg(**kw)


def test_mdn_estimator_runs():
    task = conjugate_gaussian_task()
    p = run_inference(task.prior, task.make_simulator(), task.x_o, small_cfg(estimator="mdn", n_components=3))
    assert p.sample(20, seed=0).shape == (20, 2)


@pytest.mark.slow
def test_embedding_matches_hand_summary():
    task = sufficient_statistic_task()
    cfg = InferenceConfig(algorithm="snpe-c", rounds=1, simulations=4000, embedding_dim=1, seed=11, sampler=FAST_SAMPLER)
    learned = run_inference(task.prior, task.make_simulator(), task.x_o, cfg).sample(4000, seed=2)
    summary = Simulator(lambda t, rng: task.make_simulator().fn(t, rng)[:1], 1)
    cfg_hand = InferenceConfig(algorithm="snpe-c", rounds=1, simulations=4000, seed=11, sampler=FAST_SAMPLER)
    hand = run_inference(task.prior, summary, task.x_o[:1], cfg_hand).sample(4000, seed=2)
    assert abs(learned.mean() - hand.mean()) < 0.1
    assert abs(learned.std() / hand.std() - 1) < 0.3
    assert abs(hand.mean() - task.posterior_mean[0]) < 0.1
