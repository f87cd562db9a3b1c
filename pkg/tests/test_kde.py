import math

import numpy as np
import pytest
from scipy import integrate

from smcfw.kde import KdeBridge, bandwidth_rule_a3, bridge_sample_state, gaussian_kernel, kde_marginal_logdensity
from smcfw.models import lg_model


@pytest.mark.parametrize("n, d, h", [(16, 1, 0.5), (1, 1, 1.0), (1, 5, 1.0), (10_000, 2, 10_000 ** (-1 / 6))])
def test_bandwidth_rule(n, d, h):
    assert bandwidth_rule_a3(n, d) == pytest.approx(h, rel=1e-14)


def test_bandwidth_rule_value():
    assert bandwidth_rule_a3(10_000, 2) == pytest.approx(0.21544, abs=1e-5)
    with pytest.raises(ValueError):
        bandwidth_rule_a3(0, 1)


def test_kernel_properties():
    mass, _ = integrate.quad(lambda z: float(gaussian_kernel([z])), -np.inf, np.inf)
    second, _ = integrate.quad(lambda z: z * z * float(gaussian_kernel([z])), -np.inf, np.inf)
    assert mass == pytest.approx(1.0, abs=1e-12)
    assert second == pytest.approx(1.0, abs=1e-10)
    z = np.linspace(-50, 50, 1001)[:, None]
    assert np.all(gaussian_kernel(z) >= 0) and gaussian_kernel(z).max() <= float(gaussian_kernel([0.0]))


def bridge(u, x=None, h=0.5):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    x = np.zeros(u.shape[0]) if x is None else np.asarray(x, dtype=float)
    return KdeBridge(support_u=u, support_x=x, h=h)


def test_validation():
    with pytest.raises(ValueError):
        bridge([[0.0]], h=0.0)
    with pytest.raises(ValueError):
        bridge([[np.nan]])
    with pytest.raises(ValueError):
        KdeBridge(support_u=np.zeros((2, 1)), support_x=np.zeros(3), h=1.0)


def test_vanishing_bandwidth(rng):
    b = bridge([[0.3, -1.0], [2.0, 4.0]], h=1e-12)
    u, j = b.sample_theta(rng, 100)
    np.testing.assert_allclose(u, b.support_u[j], atol=1e-8)


def test_single_support_moments(rng):
    b = bridge([[1.5]], h=0.3)
    u, _ = b.sample_theta(rng, 100_000)
    assert abs(u.mean() - 1.5) <= 3 * 0.3 / math.sqrt(u.size)
    sd = u.std(ddof=1)
    assert abs(sd - 0.3) <= 3 * 0.3 / math.sqrt(2 * (u.size - 1))


def test_two_point_selection_frequency(rng):
    b = bridge([[0.0], [1.0]])
    _, j = b.sample_theta(rng, 10_000)
    assert abs((j == 0).mean() - 0.5) <= 3 * math.sqrt(0.25 / 10_000)


def test_marginal_at_support_point():
    for d in (1, 3):
        h = 0.2
        b = bridge(np.full((1, d), 0.7), h=h)
        expected = -d * math.log(h) - 0.5 * d * math.log(2 * math.pi)
        assert b.marginal_logdensity(np.full((1, d), 0.7))[0] == pytest.approx(expected, abs=1e-12)
        assert math.exp(expected) == pytest.approx(b.max_density(), rel=1e-12)


def test_marginal_symmetry_and_two_terms():
    b = bridge([[0.0]], h=0.7)
    assert b.marginal_logdensity([[0.4]])[0] == pytest.approx(b.marginal_logdensity([[-0.4]])[0], abs=1e-15)
    b2 = bridge([[-1.0], [1.0]], h=1.0)
    assert b2.marginal_logdensity([[0.0]])[0] == pytest.approx(math.log(float(gaussian_kernel([1.0]))), abs=1e-14)


def test_marginal_matches_direct_sum(rng):
    u = rng.normal(size=(7, 2))
    b = bridge(u, h=0.4)
    pts = rng.normal(size=(5, 2))
    direct = [math.log(np.mean(gaussian_kernel((p - u) / 0.4)) / 0.4 ** 2) for p in pts]
    np.testing.assert_allclose(kde_marginal_logdensity(b, pts), direct, rtol=1e-12)


def test_bridge_state_singleton_and_degenerate(rng):
    m = lg_model()
    b = bridge([[0.0, 0.0]], x=[2.5])
    x = bridge_sample_state(b, np.array([[1e12, 1.0]] * 3), m, 4, rng)
    assert x.shape == (3, 4)
    np.testing.assert_allclose(x, 2.5, atol=1e-4)


def test_bridge_state_mean():
    rng = np.random.default_rng(1)
    m = lg_model()
    xs = rng.normal(size=50) * 3
    b = bridge(np.zeros((50, 2)), x=xs)
    x = b.sample_state(m, np.array([[1.0, 1.0]]), 10_000, rng).ravel()
    assert abs(x.mean() - xs.mean()) <= 3 * x.std(ddof=1) / math.sqrt(x.size)
