import math

import numpy as np
import pytest

from smcfw import streams
from smcfw.fk_oracle import hmm_posterior, hmm_posterior_mean
from smcfw.kalman import kalman_loglik
from smcfw.models import FiniteHMM, FlatObservation, LinearGaussianModel, LinearGaussianParams, lg_model, lg_simulate
from smcfw.particle import ess, run_pf
from smcfw.smc2 import (
    ParticleEngine,
    PmmhProposal,
    Smc2Config,
    adapt_proposal,
    default_proposal,
    estimate,
    ibis_exact_step,
    pmmh_kernel,
    smc2_init,
    smc2_step,
    state_mean,
    theta_moments,
)


class PointMassLG(LinearGaussianModel):
    """Gaussian linear model whose prior is a point mass at ``theta0``."""

    def __init__(self, theta0=(1.0, 1.0)):
        super().__init__(tau0=1.0)
        self.theta0 = np.asarray(theta0, dtype=float)

    def prior_sample(self, rng, size):
        return np.tile(self.theta0, (size, 1))

    def prior_logdensity(self, theta):
        theta = np.atleast_2d(theta)
        return np.where(np.all(theta == self.theta0, axis=-1), 0.0, -np.inf)

    def prior_logdensity_unconstrained(self, u):
        return self.prior_logdensity(np.exp(u))


def run(model, ys, config, seed, exact=False):
    s = smc2_init(model, config, ys[0], seed, exact=exact)
    for t, y in enumerate(ys[1:], start=2):
        s = smc2_step(s, y, t)
    return s


@pytest.fixture(scope="module")
def lg_data():
    return lg_simulate(LinearGaussianParams(), 60, np.random.default_rng(77))


def test_single_theta_particle(lg_data):
    _, y = lg_data
    s = smc2_init(lg_model(), Smc2Config(n_theta=1, n_x=10), y[0], seed=1)
    assert s.n_theta == 1 and s.weights[0] == 1.0


def test_constant_potential_never_rejuvenates(lg_data):
    _, y = lg_data
    m = FlatObservation(lg_model(), logc=-1.0)
    s = smc2_init(m, Smc2Config(n_theta=50, n_x=5), y[0], seed=1)
    for t in range(2, 20):
        s = smc2_step(s, y[t - 1], t)
        assert s.last_ess == pytest.approx(50.0)
    assert not s.rejuvenation_log


def test_prior_moments():
    s = smc2_init(FlatObservation(lg_model()), Smc2Config(n_theta=10_000, n_x=2), 0.0, seed=4)
    mean, sd = theta_moments(s)
    # Exponential(1): mean 1, variance 1, fourth central moment 9
    assert np.all(np.abs(mean - 1.0) <= 3 / math.sqrt(10_000))
    assert np.all(np.abs(sd ** 2 - 1.0) <= 3 * math.sqrt(8 / 10_000))


def test_flat_data_keeps_the_prior():
    m = FlatObservation(lg_model())
    s = run(m, np.zeros(30), Smc2Config(n_theta=4000, n_x=2), seed=9)
    mean, _ = theta_moments(s)
    assert np.all(np.abs(mean - 1.0) <= 3 / math.sqrt(4000))


@pytest.mark.slow
def test_evidence_with_point_mass_prior(lg_data):
    _, y = lg_data
    y = y[:50]
    exact = kalman_loglik(LinearGaussianParams(), y)
    ratios = []
    for r in range(50):
        s = run(PointMassLG(), y, Smc2Config(n_theta=20, n_x=32), seed=100 + r)
        ratios.append(math.exp(s.log_evidence - exact))
    ratios = np.array(ratios)
    assert abs(ratios.mean() - 1.0) <= 3 * ratios.std(ddof=1) / math.sqrt(ratios.size)


def test_exact_sampler_point_mass_evidence_is_kalman(lg_data):
    _, y = lg_data
    s = run(PointMassLG(), y, Smc2Config(n_theta=10), seed=1, exact=True)
    assert s.log_evidence == pytest.approx(kalman_loglik(LinearGaussianParams(), y), abs=1e-10)


def test_ess_bounds_and_resampling_restores(lg_data):
    _, y = lg_data
    s = smc2_init(lg_model(), Smc2Config(n_theta=200, n_x=20), y[0], seed=2)
    for t in range(2, 40):
        s = smc2_step(s, y[t - 1], t)
        assert 1.0 <= s.last_ess <= 200.0 + 1e-9
        if s.resampled:
            assert ess(s.logw) == pytest.approx(200.0)
        assert estimate(s, lambda th, pf: np.ones(len(th))) == pytest.approx(1.0, abs=1e-12)
    assert s.rejuvenation_log


def test_estimate_is_weighted_average(lg_data):
    _, y = lg_data
    s = smc2_init(FlatObservation(lg_model()), Smc2Config(n_theta=30, n_x=4), y[0], seed=5)
    assert estimate(s, lambda th, pf: th[:, 0]) == pytest.approx(s.theta[:, 0].mean(), rel=1e-12)


def test_null_proposal_is_an_exchange_move(lg_data):
    _, y = lg_data
    m = lg_model()
    engine = ParticleEngine(m, 8)
    theta = np.tile([[1.0, 1.0]], (400, 1))
    pf = run_pf(m, theta, y[:10], 8, np.random.default_rng(0))
    prop = PmmhProposal(blocks=((0, 1),), scales=np.zeros(2), adapt=False)
    th2, pf2, acc = pmmh_kernel(theta, pf, list(y[:10]), prop, m, engine, np.random.default_rng(1))
    np.testing.assert_array_equal(th2, theta)
    assert 0 < acc.mean() < 1
    changed = pf2.cum_loglik != pf.cum_loglik
    np.testing.assert_array_equal(changed, acc[0])


def _reference_pf_loglik(y, n_x, rng, tau=1.0, lam=1.0, tau0=1.0):
    """Plain scalar bootstrap filter written independently of the package."""
    x = rng.normal(0.0, 1 / math.sqrt(tau0), n_x)
    total = 0.0
    for k, obs in enumerate(y):
        if k > 0:
            w = np.exp(logg - logg.max())
            x = x[rng.choice(n_x, n_x, p=w / w.sum())]
        x = x + rng.normal(0.0, 1 / math.sqrt(tau), n_x)
        logg = -0.5 * math.log(2 * math.pi / lam) - 0.5 * lam * (obs - x) ** 2
        total += logg.max() + math.log(np.mean(np.exp(logg - logg.max())))
    return total


def test_exchange_acceptance_matches_reference_chain(lg_data):
    _, y = lg_data
    y = y[:10]
    n_x = 32
    rng = np.random.default_rng(3)
    cur = _reference_pf_loglik(y, n_x, rng)
    acc = []
    for _ in range(10_000):
        new = _reference_pf_loglik(y, n_x, rng)
        ok = math.log(rng.random()) < new - cur
        acc.append(ok)
        cur = new if ok else cur
    ref = np.array(acc[1000:], dtype=float)

    m = lg_model()
    engine = ParticleEngine(m, n_x)
    theta = np.tile([[1.0, 1.0]], (2000, 1))
    pf = run_pf(m, theta, y, n_x, np.random.default_rng(4))
    prop = PmmhProposal(blocks=((0, 1),), scales=np.zeros(2), adapt=False)
    ours = []
    for sweep in range(20):
        theta, pf, a = pmmh_kernel(theta, pf, list(y), prop, m, engine, np.random.default_rng(10 + sweep))
        if sweep >= 10:
            ours.append(a[0])
    per_chain = np.mean(ours, axis=0, dtype=float)
    # both estimates are autocorrelated: batch means for the single chain,
    # between-chain spread for the parallel ones
    batches = ref.reshape(50, -1).mean(axis=1)
    se = math.sqrt(batches.var(ddof=1) / batches.size + per_chain.var(ddof=1) / per_chain.size)
    assert abs(ref.mean() - per_chain.mean()) <= 3 * se


@pytest.mark.slow
def test_pmmh_targets_exact_posterior_on_finite_model():
    m = FiniteHMM()
    _, y = m.simulate(0.8, 15, np.random.default_rng(21))
    post = hmm_posterior(m, y)
    exact_mean = post.mean()
    exact_low = post.mean(lambda u: (np.exp(u) < 1.0).astype(float))
    engine = ParticleEngine(m, 16)
    M = 2000
    theta = m.prior_sample(np.random.default_rng(0), M)
    pf = run_pf(m, theta, y, 16, np.random.default_rng(1))
    prop = default_proposal(1, scale=1.0, adapt=False)
    for it in range(50):
        theta, pf, _ = pmmh_kernel(theta, pf, list(y), prop, m, engine, np.random.default_rng(100 + it))
    rates = theta[:, 0]
    assert abs(rates.mean() - exact_mean) <= 3 * rates.std(ddof=1) / math.sqrt(M)
    low = (rates < 1.0).astype(float)
    assert abs(low.mean() - exact_low) <= 3 * math.sqrt(exact_low * (1 - exact_low) / M)


@pytest.mark.slow
def test_finite_model_estimate_matches_oracle():
    m = FiniteHMM()
    _, y = m.simulate(0.8, 15, np.random.default_rng(22))
    exact = hmm_posterior_mean(m, y)
    est = [estimate(run(m, y, Smc2Config(n_theta=10_000, n_x=20), seed=300 + r), lambda th, pf: th[:, 0])
           for r in range(6)]
    est = np.array(est)
    assert abs(est.mean() - exact) <= 3 * est.std(ddof=1) / math.sqrt(est.size)


@pytest.mark.slow
def test_particle_sampler_approaches_exact_sampler(lg_data):
    _, y = lg_data
    y = y[:20]
    exact = theta_moments(run(lg_model(), y, Smc2Config(n_theta=20_000), seed=1, exact=True))[0]
    errors = []
    for n_x in (10, 100, 1000):
        err = [np.abs(theta_moments(run(lg_model(), y, Smc2Config(n_theta=1000, n_x=n_x), seed=s))[0] - exact).mean()
               for s in (1, 2, 3)]
        errors.append(np.mean(err))
    assert errors[2] < errors[0]


def test_ibis_exact_step_requires_exact_state(lg_data):
    _, y = lg_data
    s = smc2_init(lg_model(), Smc2Config(n_theta=5, n_x=3), y[0], seed=1)
    with pytest.raises(TypeError):
        ibis_exact_step(s, y[1])
    e = smc2_init(lg_model(), Smc2Config(n_theta=5), y[0], seed=1, exact=True)
    assert ibis_exact_step(e, y[1]).time == 2
    assert np.isfinite(state_mean(e))


def test_adapt_proposal_examples():
    prop = default_proposal(1, scale=0.7)
    same = adapt_proposal(np.zeros((5, 1)), np.full(5, 0.2), prop)
    np.testing.assert_array_equal(same.scales, prop.scales)
    two = adapt_proposal(np.array([[-1.0], [1.0]]), np.array([0.5, 0.5]), prop)
    assert two.scales[0] == pytest.approx(2.38)
    u = np.random.default_rng(0).normal(size=(100, 2))
    W = np.full(100, 0.01)
    p2 = default_proposal(2, blocks=((0, 1),))
    a = adapt_proposal(u, W, p2).scales
    b = adapt_proposal(3.0 * u, W, p2).scales
    np.testing.assert_allclose(b, 3.0 * a, rtol=1e-12)
    assert a[0] == pytest.approx(2.38 / math.sqrt(2) * np.sqrt(np.cov(u[:, 0], bias=True)), rel=1e-12)


def test_proposal_blocks_must_partition():
    with pytest.raises(ValueError):
        PmmhProposal(blocks=((0,), (0,)), scales=np.ones(2))


def test_same_output_for_any_worker_count(lg_data, monkeypatch):
    _, y = lg_data
    cfg = Smc2Config(n_theta=300, n_x=10, chunk_size=64)
    monkeypatch.setenv(streams.WORKERS_ENV, "1")
    a = run(lg_model(), y[:30], cfg, seed=8)
    monkeypatch.setenv(streams.WORKERS_ENV, "4")
    b = run(lg_model(), y[:30], cfg, seed=8)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.logw, b.logw)
    assert a.log_evidence == b.log_evidence
