"""State-space models: the abstract interface and three concrete models.

Every model works on batches.  Parameters arrive as an array of shape
``(M, d)`` on the natural (positive) scale, state particles as an array of
shape ``(M, n_x)`` for scalar states or ``(M, n_x, k)`` for vector states;
row ``m`` of the particles belongs to row ``m`` of the parameters.  All
parameters are positive and are moved on the log scale by the samplers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import ParameterDomainError

LOG_2PI = math.log(2.0 * math.pi)


def _col(theta: np.ndarray, k: int) -> np.ndarray:
    """Column ``k`` of ``theta`` shaped to broadcast against ``(M, n_x)``."""
    return np.atleast_2d(theta)[:, k, None]


class StateSpaceModel:
    """Base class for a parameterised hidden Markov model.

    Subclasses define the prior on the parameter, the initial law of the
    hidden chain, its transition kernel and the observation density.  The
    default prior is an independent Exponential(``prior_rate``) on every
    coordinate.
    """

    param_names: tuple[str, ...] = ()
    has_transition_density: bool = False
    prior_rate: float = 1.0

    @property
    def dim_theta(self) -> int:
        return len(self.param_names)

    # prior -----------------------------------------------------------
    def prior_logdensity(self, theta):
        theta = np.asarray(theta, dtype=float)
        rate = self.prior_rate
        out = np.sum(math.log(rate) - rate * theta, axis=-1)
        return np.where(np.all(theta > 0, axis=-1), out, -np.inf)

    def prior_sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.exponential(1.0 / self.prior_rate, size=(size, self.dim_theta))

    # parameter scale -------------------------------------------------
    def to_unconstrained(self, theta):
        with np.errstate(divide="ignore"):
            return np.log(theta)

    def from_unconstrained(self, u):
        return np.exp(u)

    def prior_logdensity_unconstrained(self, u):
        """Prior density of ``log(theta)``, Jacobian included."""
        u = np.asarray(u, dtype=float)
        return self.prior_logdensity(np.exp(u)) + np.sum(u, axis=-1)

    # dynamics --------------------------------------------------------
    def init_sample(self, theta, n_x: int, rng: np.random.Generator):
        raise NotImplementedError

    def init_logdensity(self, theta, x):
        raise NotImplementedError

    def transition_sample(self, theta, x, rng: np.random.Generator):
        raise NotImplementedError

    def transition_logdensity(self, theta, x, x_new):
        raise NotImplementedError(f"{type(self).__name__} has no transition density")

    def obs_logdensity(self, theta, x, y):
        raise NotImplementedError

    def state_summary(self, x):
        """Scalar summary of each state particle reported as "the state"."""
        return np.asarray(x, dtype=float)

    def state_dim(self) -> int:
        """Trailing dimension of a state particle (0 for scalars)."""
        return 0


# ---------------------------------------------------------------------------
# Gaussian linear model


@dataclass(frozen=True)
class LinearGaussianParams:
    """Precisions of the random-walk-plus-noise model."""

    tau0: float = 1.0
    tau: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        for name in ("tau0", "tau", "lam"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ParameterDomainError(f"{name} must be a positive finite precision, got {value!r}")

    @property
    def theta(self) -> np.ndarray:
        """The inferred parameter vector ``(tau, lam)``."""
        return np.array([self.tau, self.lam])


class LinearGaussianModel(StateSpaceModel):
    """x0 ~ N(0, 1/tau0), x_k ~ N(x_{k-1}, 1/tau), y_k ~ N(x_k, 1/lam).

    ``tau0`` is held fixed; the parameter is ``theta = (tau, lam)``.
    """

    param_names = ("tau", "lam")
    has_transition_density = True

    def __init__(self, tau0: float = 1.0, prior_rate: float = 1.0):
        if not tau0 > 0:
            raise ParameterDomainError(f"tau0 must be positive, got {tau0!r}")
        if not prior_rate > 0:
            raise ParameterDomainError(f"prior_rate must be positive, got {prior_rate!r}")
        self.tau0 = float(tau0)
        self.prior_rate = float(prior_rate)

    def init_sample(self, theta, n_x, rng):
        m = np.atleast_2d(theta).shape[0]
        return rng.standard_normal((m, n_x)) / math.sqrt(self.tau0)

    def init_logdensity(self, theta, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * (math.log(self.tau0) - LOG_2PI) - 0.5 * self.tau0 * x * x

    def transition_sample(self, theta, x, rng):
        tau = _col(theta, 0)
        return x + rng.standard_normal(np.shape(x)) / np.sqrt(tau)

    def transition_logdensity(self, theta, x, x_new):
        tau = _col(theta, 0)
        d = np.asarray(x_new) - np.asarray(x)
        return 0.5 * (np.log(tau) - LOG_2PI) - 0.5 * tau * d * d

    def obs_logdensity(self, theta, x, y):
        lam = _col(theta, 1)
        d = y - np.asarray(x)
        return 0.5 * (np.log(lam) - LOG_2PI) - 0.5 * lam * d * d


def lg_model(tau0: float | LinearGaussianParams = 1.0, prior_rate: float = 1.0) -> LinearGaussianModel:
    """Gaussian linear model; accepts the fixed ``tau0`` or a full parameter set."""
    if isinstance(tau0, LinearGaussianParams):
        tau0 = tau0.tau0
    return LinearGaussianModel(tau0=tau0, prior_rate=prior_rate)


def lg_simulate(params: LinearGaussianParams, n: int, rng: np.random.Generator):
    """Draw ``(x_{0:n}, y_{1:n})`` from the Gaussian linear model."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    x0 = rng.standard_normal() / math.sqrt(params.tau0)
    steps = rng.standard_normal(n) / math.sqrt(params.tau)
    noise = rng.standard_normal(n) / math.sqrt(params.lam)
    x = np.empty(n + 1)
    x[0] = x0
    x[1:] = x0 + np.cumsum(steps)
    y = x[1:] + noise
    return x, y


# ---------------------------------------------------------------------------
# Levy-driven (Gamma-OU) stochastic volatility


@dataclass(frozen=True)
class LevySVParams:
    """Gamma-OU volatility: stationary Gamma(kappa, rate delta), decay lam."""

    kappa: float = 1.0
    delta: float = 1.0
    gamma: float = 0.2
    lam: float = 0.5
    delta_t: float = 1.0

    def __post_init__(self):
        for name in ("kappa", "delta", "gamma", "lam", "delta_t"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ParameterDomainError(f"{name} must be positive and finite, got {value!r}")

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.kappa, self.delta, self.gamma, self.lam])


def _jump_sums(rate, delta, lam, shape, dt, rng):
    """Jump totals over one interval for every cell of ``shape``.

    Returns ``(raw, weighted)``: the plain sum of jump sizes and the sum of
    ``size * (1 - exp(-lam * (dt - c)))`` for arrival time ``c``.  The
    decayed contribution of the jumps to the end-of-interval variance is
    ``raw - weighted``.
    """
    rate = np.broadcast_to(rate, shape)
    counts = rng.poisson(rate)
    size = counts.size
    total = int(counts.sum())
    if total == 0:
        zero = np.zeros(shape)
        return zero, zero
    owner = np.repeat(np.arange(size), counts.ravel())
    sizes = rng.exponential(1.0, total) / np.broadcast_to(delta, shape).ravel()[owner]
    arrival = rng.random(total) * dt
    lam_j = np.broadcast_to(lam, shape).ravel()[owner]
    weighted = sizes * -np.expm1(-lam_j * (dt - arrival))
    raw = np.bincount(owner, sizes, minlength=size).reshape(shape)
    return raw, np.bincount(owner, weighted, minlength=size).reshape(shape)


class LevySVModel(StateSpaceModel):
    """Gamma-OU stochastic volatility with skewed Gaussian returns.

    The state is ``(sigma2, v)``: the spot variance at the end of the step
    and the variance integrated over the step.  ``theta = (kappa, delta,
    gamma, lam)``; jumps arrive at rate ``lam * kappa`` with
    Exponential(rate ``delta``) sizes and the spot variance decays at rate
    ``lam``, so ``sigma2`` is stationary Gamma(kappa, rate delta).  Given the
    state, ``y ~ N(gamma * v, v)``.  The transition has no closed-form
    density.
    """

    param_names = ("kappa", "delta", "gamma", "lam")
    has_transition_density = False

    def __init__(self, delta_t: float = 1.0, prior_rate: float = 1.0):
        if not delta_t > 0:
            raise ParameterDomainError(f"delta_t must be positive, got {delta_t!r}")
        self.delta_t = float(delta_t)
        self.prior_rate = float(prior_rate)

    def state_dim(self):
        return 2

    def init_sample(self, theta, n_x, rng):
        kappa, delta = _col(theta, 0), _col(theta, 1)
        m = kappa.shape[0]
        x = np.zeros((m, n_x, 2))
        x[..., 0] = rng.gamma(np.broadcast_to(kappa, (m, n_x))) / delta
        return x

    def init_logdensity(self, theta, x):
        from scipy.special import gammaln

        kappa, delta = _col(theta, 0), _col(theta, 1)
        s = x[..., 0]
        return kappa * np.log(delta) - gammaln(kappa) + (kappa - 1) * np.log(s) - delta * s

    def transition_sample(self, theta, x, rng):
        kappa, delta, lam = _col(theta, 0), _col(theta, 1), _col(theta, 3)
        dt = self.delta_t
        s_prev = x[..., 0]
        shape = s_prev.shape
        raw, weighted = _jump_sums(lam * kappa * dt, delta, lam, shape, dt, rng)
        keep = np.exp(-lam * dt)
        out = np.empty(shape + (2,))
        out[..., 0] = keep * s_prev + (raw - weighted)
        out[..., 1] = (-np.expm1(-lam * dt) * s_prev + weighted) / lam
        return out

    def obs_logdensity(self, theta, x, y):
        gamma = _col(theta, 2)
        v = x[..., 1]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            d = y - gamma * v
            return -0.5 * (LOG_2PI + np.log(v)) - 0.5 * d * d / v

    def state_summary(self, x):
        return np.asarray(x)[..., 0]


def levy_sv_model(params: LevySVParams | None = None, prior_rate: float = 1.0) -> LevySVModel:
    delta_t = 1.0 if params is None else params.delta_t
    return LevySVModel(delta_t=delta_t, prior_rate=prior_rate)


def levy_simulate(params: LevySVParams, n: int, rng: np.random.Generator):
    """Simulate ``n`` steps; returns ``(states (n+1, 2), y (n,))``.

    The spot variance obeys a linear recursion driven by independent jump
    totals, so the whole path is generated with one filter pass.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    p = params
    dt = p.delta_t
    s0 = rng.gamma(p.kappa) / p.delta
    raw, weighted = _jump_sums(p.lam * p.kappa * dt, p.delta, p.lam, (n,), dt, rng)
    keep = math.exp(-p.lam * dt)
    s = np.empty(n + 1)
    s[0] = s0
    s[1:] = lfilter([1.0], [1.0, -keep], raw - weighted, zi=[keep * s0])[0]
    v = (-math.expm1(-p.lam * dt) * s[:-1] + weighted) / p.lam
    y = p.gamma * v + np.sqrt(v) * rng.standard_normal(n)
    states = np.zeros((n + 1, 2))
    states[:, 0] = s
    states[1:, 1] = v
    return states, y


# ---------------------------------------------------------------------------
# Finite-state model (exactly solvable; used against the finite oracle)


class FiniteHMM(StateSpaceModel):
    """Hidden chain on ``{0, ..., K-1}`` with Gaussian emissions.

    With ``m = exp(-theta)`` the chain stays put with probability ``1 - m``
    and otherwise jumps to a uniformly chosen state; under the
    Exponential(1) prior ``m`` is uniform on (0, 1).  ``y ~ N(means[x], sd^2)``.
    """

    param_names = ("rate",)
    has_transition_density = True

    def __init__(self, means=(-1.0, 0.0, 1.0), sd: float = 0.5, prior_rate: float = 1.0):
        self.means = np.asarray(means, dtype=float)
        if self.means.ndim != 1 or self.means.size < 1:
            raise ValueError("means must be a non-empty vector")
        if not sd > 0:
            raise ParameterDomainError(f"sd must be positive, got {sd!r}")
        self.sd = float(sd)
        self.prior_rate = float(prior_rate)

    @property
    def n_states(self) -> int:
        return self.means.size

    def initial_distribution(self) -> np.ndarray:
        return np.full(self.n_states, 1.0 / self.n_states)

    def transition_matrix(self, rate: float) -> np.ndarray:
        k = self.n_states
        m = math.exp(-rate)
        return (1.0 - m) * np.eye(k) + m / k

    def emission_loglik(self, y) -> np.ndarray:
        """``log g(y | x)`` for every state, shape ``(len(y), K)``."""
        d = np.asarray(y, dtype=float)[:, None] - self.means[None, :]
        return -0.5 * (LOG_2PI + 2 * math.log(self.sd)) - 0.5 * (d / self.sd) ** 2

    def init_sample(self, theta, n_x, rng):
        m = np.atleast_2d(theta).shape[0]
        return rng.integers(0, self.n_states, size=(m, n_x))

    def init_logdensity(self, theta, x):
        return np.full(np.shape(x), -math.log(self.n_states))

    def transition_sample(self, theta, x, rng):
        m = np.exp(-_col(theta, 0))
        jump = rng.random(np.shape(x)) < m
        fresh = rng.integers(0, self.n_states, size=np.shape(x))
        return np.where(jump, fresh, x)

    def transition_logdensity(self, theta, x, x_new):
        m = np.exp(-_col(theta, 0))
        k = self.n_states
        same = np.asarray(x) == np.asarray(x_new)
        return np.log(np.where(same, 1.0 - m + m / k, m / k))

    def obs_logdensity(self, theta, x, y):
        d = (y - self.means[np.asarray(x)]) / self.sd
        return -0.5 * (LOG_2PI + 2 * math.log(self.sd)) - 0.5 * d * d

    def simulate(self, rate: float, n: int, rng: np.random.Generator):
        """Draw ``(x_{0:n}, y_{1:n})`` at parameter ``rate``."""
        theta = np.array([[rate]])
        x = np.empty(n + 1, dtype=int)
        x[0] = self.init_sample(theta, 1, rng)[0, 0]
        for k in range(1, n + 1):
            x[k] = self.transition_sample(theta, x[k - 1 : k][None], rng)[0, 0]
        y = self.means[x[1:]] + self.sd * rng.standard_normal(n)
        return x, y


class FlatObservation(StateSpaceModel):
    """Wrap a model so that every observation has the same density ``exp(logc)``."""

    def __init__(self, base: StateSpaceModel, logc: float = 0.0):
        self.base = base
        self.logc = float(logc)
        self.param_names = base.param_names
        self.has_transition_density = base.has_transition_density
        self.prior_rate = base.prior_rate

    def prior_logdensity(self, theta):
        return self.base.prior_logdensity(theta)

    def prior_sample(self, rng, size):
        return self.base.prior_sample(rng, size)

    def init_sample(self, theta, n_x, rng):
        return self.base.init_sample(theta, n_x, rng)

    def init_logdensity(self, theta, x):
        return self.base.init_logdensity(theta, x)

    def transition_sample(self, theta, x, rng):
        return self.base.transition_sample(theta, x, rng)

    def transition_logdensity(self, theta, x, x_new):
        return self.base.transition_logdensity(theta, x, x_new)

    def obs_logdensity(self, theta, x, y):
        shape = np.shape(x)[:2]
        return np.full(shape, self.logc)

    def state_summary(self, x):
        return self.base.state_summary(x)

    def state_dim(self):
        return self.base.state_dim()
