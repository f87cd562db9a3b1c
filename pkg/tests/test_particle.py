import math

import numpy as np
import pytest
from scipy import stats

from smcfw.errors import DegenerateWeightsError
from smcfw.kalman import kalman_loglik
from smcfw.models import FlatObservation, LinearGaussianParams, lg_model, lg_simulate
from smcfw.particle import (
    Weights,
    ess,
    normalize,
    pf_init,
    pf_step,
    resample_multinomial,
    resample_systematic,
    row_multinomial,
    run_pf,
)

THETA = np.array([[1.0, 1.0]])


def test_weights_normalized_sum_to_one(rng):
    w = Weights.from_log(rng.normal(size=50) * 300)
    assert np.all(w.normalized >= 0)
    assert abs(w.normalized.sum() - 1.0) < 1e-12


def test_ess_examples():
    assert ess(np.zeros(100)) == pytest.approx(100.0)
    assert ess(np.array([0.0, -np.inf, -np.inf])) == pytest.approx(1.0)
    assert ess(np.log([0.5, 0.25, 0.25])) == pytest.approx(1 / (0.25 + 0.0625 + 0.0625))
    with pytest.raises(DegenerateWeightsError):
        ess(np.full(4, -np.inf))


def test_resampling_examples(rng):
    w = np.array([-np.inf, -np.inf, -np.inf, 0.0, -np.inf])
    assert np.all(resample_multinomial(w, 50, rng) == 3)
    assert np.all(resample_systematic(w, 50, rng) == 3)
    counts = np.bincount(resample_systematic(np.zeros(7), 30, rng), minlength=7)
    assert set(counts) <= {30 // 7, 30 // 7 + 1}
    n = 10_000
    idx = resample_multinomial(np.log([0.9, 0.1]), n, rng)
    assert abs((idx == 0).sum() - 9000) <= 3 * math.sqrt(n * 0.9 * 0.1)


def test_systematic_counts_within_one(rng):
    for _ in range(50):
        W = rng.dirichlet(np.ones(20))
        counts = np.bincount(resample_systematic(np.log(W), 200, rng), minlength=20)
        assert np.all(np.abs(counts - 200 * W) < 1)


def test_row_multinomial_law(rng):
    W = np.array([0.5, 0.3, 0.15, 0.05])
    logw = np.tile(np.log(W), (2000, 1))
    idx = row_multinomial(logw, rng)
    assert idx.shape == (2000, 4) and idx.min() >= 0 and idx.max() <= 3
    counts = np.bincount(idx.ravel(), minlength=4)
    assert stats.chisquare(counts, W * counts.sum()).pvalue > 1e-3
    # rows are independent multinomial draws: count of index 0 per row is Binomial(4, 0.5)
    per_row = (idx == 0).sum(axis=1)
    expected = stats.binom.pmf(np.arange(5), 4, 0.5) * 2000
    assert stats.chisquare(np.bincount(per_row, minlength=5), expected).pvalue > 1e-3


def test_row_multinomial_dead_rows(rng):
    logw = np.array([[0.0, -np.inf], [-np.inf, -np.inf]])
    with pytest.raises(DegenerateWeightsError):
        row_multinomial(logw, rng)
    idx = row_multinomial(logw, rng, strict=False)
    assert np.all(idx[0] == 0)


def test_pf_init_single_particle(rng):
    m = lg_model()
    s = pf_init(m, THETA, 1, rng, y_first=0.4)
    assert s.cum_loglik[0] == pytest.approx(m.obs_logdensity(THETA, s.x, 0.4)[0, 0], abs=1e-14)


def test_constant_potential(rng):
    m = FlatObservation(lg_model(), logc=-2.0)
    s = run_pf(m, np.ones((3, 2)), [1.0, 2.0, 3.0], 10, rng)
    np.testing.assert_allclose(s.cum_loglik, -6.0, atol=1e-12)
    assert np.all(s.last_pot == -2.0)


def test_pf_init_unbiased_first_observation(rng):
    m = lg_model()
    s = pf_init(m, np.tile(THETA, (1000, 1)), 8, rng, y_first=0.7)
    z = np.exp(s.cum_loglik)
    exact = math.exp(kalman_loglik(LinearGaussianParams(), [0.7]))
    assert abs(z.mean() - exact) <= 3 * z.std(ddof=1) / math.sqrt(z.size)


def test_pf_likelihood_unbiased(rng):
    """Mean of the likelihood estimate over 1000 independent filters matches the Kalman value."""
    p = LinearGaussianParams()
    _, y = lg_simulate(p, 50, np.random.default_rng(2024))
    s = run_pf(lg_model(), np.tile(THETA, (1000, 1)), y, 64, rng)
    ratio = np.exp(s.cum_loglik - kalman_loglik(p, y))
    assert abs(ratio.mean() - 1.0) <= 3 * ratio.std(ddof=1) / math.sqrt(ratio.size)


def test_single_particle_chain(rng):
    m = lg_model()
    s = pf_init(m, THETA, 1, rng, y_first=0.0, retain=5)
    before = s.cum_loglik.copy()
    s = pf_step(s, m, 1.0, rng)
    assert np.all(s.ancestors[-1] == 0)
    assert s.cum_loglik[0] == pytest.approx(before[0] + m.obs_logdensity(THETA, s.x, 1.0)[0, 0], abs=1e-14)


def test_degenerate_dynamics_with_equal_weights(rng):
    m = FlatObservation(lg_model(), logc=0.0)
    theta = np.array([[1e12, 1.0]])
    s = pf_init(m, theta, 6, rng, y_first=0.0, retain=3)
    x0 = np.sort(s.x[0])
    s = pf_step(s, m, 0.0, rng)
    # each particle is a copy of one parent up to a 1e-6 move
    assert np.all(np.min(np.abs(s.x[0][:, None] - x0[None, :]), axis=1) < 1e-4)
    assert s.last_pot[0] == 0.0


def test_invariants_of_the_filter_state(rng):
    m = lg_model()
    _, y = lg_simulate(LinearGaussianParams(), 12, rng)
    s = run_pf(m, np.tile(THETA, (4, 1)), y, 16, rng, retain=100)
    assert len(s.logpot) == len(y) == s.n_steps
    total = np.zeros(4)
    for pot in s.logpot:
        total = total + pot
    np.testing.assert_array_equal(total, s.cum_loglik)
    for anc in s.ancestors:
        assert anc.shape == (4, 16) and anc.min() >= 0 and anc.max() < 16
    assert all(p.shape == (4, 16) for p in s.paths)


def test_retained_history_is_bounded(rng):
    m = lg_model()
    s = run_pf(m, THETA, np.zeros(30), 8, rng, retain=5)
    assert len(s.logpot) == len(s.paths) == len(s.ancestors) == 5


def test_degenerate_step_raises(rng):
    m = FlatObservation(lg_model(), logc=-np.inf)
    s = pf_init(m, THETA, 4, rng, y_first=0.0)
    assert not np.isfinite(s.cum_loglik[0])
    with pytest.raises(DegenerateWeightsError):
        pf_step(s, m, 0.0, rng)


def test_extend_only_records_no_potential(rng):
    m = lg_model()
    s = pf_init(m, THETA, 5, rng, y_first=0.0)
    e = pf_step(s, m, None, rng, extend_only=True)
    assert e.n_steps == s.n_steps and e.fresh
    np.testing.assert_array_equal(e.cum_loglik, s.cum_loglik)


def test_relabelled_start_has_the_same_law():
    """Permuting the initial particles does not change the distribution of the estimate."""
    m = lg_model()
    _, y = lg_simulate(LinearGaussianParams(), 10, np.random.default_rng(5))
    x0 = np.random.default_rng(6).normal(size=(1, 32)).repeat(2000, axis=0)
    perm = x0[:, ::-1].copy()
    theta = np.tile(THETA, (2000, 1))
    a = run_pf(m, theta, y, 32, np.random.default_rng(7), x_start=x0).cum_loglik
    b = run_pf(m, theta, y, 32, np.random.default_rng(8), x_start=perm).cum_loglik
    assert stats.ks_2samp(a, b).pvalue > 1e-3
    assert normalize(np.zeros(3)).sum() == pytest.approx(1.0)
