import math

import numpy as np
import pytest
from scipy import integrate, stats

from smcfw.kalman import Precisions, kalman_init, kalman_loglik, kalman_predictive, kalman_step
from smcfw.models import LinearGaussianParams, lg_simulate


@pytest.mark.parametrize("tau0, var", [(1.0, 1.0), (4.0, 0.25), (1e-6, 1e6)])
def test_init(tau0, var):
    s = kalman_init(LinearGaussianParams(tau0=tau0))
    assert (s.mean, s.step, s.cum_loglik) == (0.0, 0, 0.0)
    assert s.variance == pytest.approx(var, rel=1e-12)


def test_first_increment_is_gaussian_convolution():
    p = LinearGaussianParams()
    s = kalman_step(kalman_init(p), p, 0.5)
    assert s.cum_loglik == pytest.approx(stats.norm.logpdf(0.5, 0, math.sqrt(3.0)), abs=1e-14)
    assert kalman_predictive(kalman_init(p), p)[1] == pytest.approx(3.0)


def test_noiseless_observation_pins_the_mean():
    p = LinearGaussianParams(lam=1e12)
    s = kalman_step(kalman_init(p), p, 1.7)
    assert abs(s.mean - 1.7) < 1e-4


def test_cumulative_is_sum_of_increments(rng):
    p = LinearGaussianParams(tau0=2.0, tau=0.5, lam=3.0)
    _, y = lg_simulate(p, 40, rng)
    s = kalman_init(p)
    incs = []
    for obs in y:
        nxt = kalman_step(s, p, obs)
        incs.append(nxt.cum_loglik - s.cum_loglik)
        s = nxt
    assert s.cum_loglik == math.fsum(incs) or s.cum_loglik == pytest.approx(math.fsum(incs), abs=1e-12)
    assert kalman_loglik(p, y) == s.cum_loglik


def test_empty_and_single_series():
    p = LinearGaussianParams(tau0=2.0, tau=0.5, lam=3.0)
    assert kalman_loglik(p, []) == 0.0
    var = 1 / 2.0 + 1 / 0.5 + 1 / 3.0
    assert kalman_loglik(p, [0.8]) == pytest.approx(stats.norm.logpdf(0.8, 0, math.sqrt(var)), abs=1e-14)


def test_three_step_likelihood_against_grid_quadrature():
    """Brute-force trapezoid integration of the joint density over (x0, x1, x2, x3)."""
    p = LinearGaussianParams(tau0=1.0, tau=2.0, lam=1.5)
    y = np.array([0.3, -0.4, 0.9])
    grid = np.linspace(-7, 7, 801)
    norm = lambda z, sd: np.exp(-0.5 * (z / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    # integrate out the chain one coordinate at a time (exact trapezoid sums on the grid)
    sd_t, sd_o = 1 / math.sqrt(p.tau), 1 / math.sqrt(p.lam)
    trans = norm(grid[None, :] - grid[:, None], sd_t)
    msg = norm(grid, 1 / math.sqrt(p.tau0))
    for obs in y:
        msg = integrate.trapezoid(msg[:, None] * trans, grid, axis=0) * norm(obs - grid, sd_o)
    total = integrate.trapezoid(msg, grid)
    assert math.log(total) == pytest.approx(kalman_loglik(p, y), rel=1e-6)


def test_filtered_variance_bounds(rng):
    """0 < P_k <= min(1/lam, P_{k-1} + 1/tau) at every step for random precisions."""
    for _ in range(200):
        tau0, tau, lam = np.exp(rng.uniform(-4, 4, size=3))
        p = LinearGaussianParams(tau0=tau0, tau=tau, lam=lam)
        s = kalman_init(p)
        for obs in rng.normal(size=30) * 3:
            prev = s.variance
            s = kalman_step(s, p, obs)
            assert 0 < s.variance <= min(1 / lam, prev + 1 / tau) * (1 + 1e-12)


def test_spec_variance_bound_counterexample():
    """1/tau0 + 1/tau is not an upper bound in general: a diffuse-free start with slow dynamics exceeds it."""
    p = LinearGaussianParams(tau0=1e9, tau=1.0, lam=0.1)
    s = kalman_init(p)
    for _ in range(50):
        s = kalman_step(s, p, 0.0)
    assert s.variance > 1 / p.tau0 + 1 / p.tau


def test_deterministic_and_batched(rng):
    _, y = lg_simulate(LinearGaussianParams(), 25, rng)
    tau = np.array([0.5, 1.0, 2.0])
    lam = np.array([1.0, 3.0, 0.2])
    batch = kalman_loglik(Precisions(1.0, tau, lam), y)
    single = [kalman_loglik(LinearGaussianParams(tau=t, lam=l), y) for t, l in zip(tau, lam)]
    np.testing.assert_array_equal(batch, np.array(single))
    assert kalman_loglik(Precisions(1.0, tau, lam), y).tolist() == batch.tolist()
