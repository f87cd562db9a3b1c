"""Outer SMC over parameters: SMC2 and its exact-likelihood counterpart.

A :class:`Smc2State` carries ``N`` theta-particles, each paired with a
likelihood "engine" state: a batch of particle filters (SMC2) or of Kalman
filters (exact-likelihood IBIS on the Gaussian linear model).  Each step
extends every filter by one observation, reweights by the new potential,
and, when the effective sample size drops below ``ess_threshold * N``,
resamples systematically and rejuvenates with particle marginal
Metropolis-Hastings moves over the current window of observations.

The same machinery runs the windowed sampler of :mod:`smcfw.fixed_window`:
there the window restarts at every block and the prior of the move is the
kernel-density bridge instead of the model prior.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from . import streams
from .kalman import KalmanState, Precisions, kalman_init, kalman_step
from .particle import (
    PFState,
    concat,
    ess,
    log_mean_exp,
    normalize,
    pf_from_particles,
    pf_init,
    pf_step,
    resample_systematic,
    row_multinomial,
    run_pf,
)

RW_SCALE = 2.38
SCALE_FLOOR = 1e-3


# ---------------------------------------------------------------------------
# proposal


@dataclass(frozen=True)
class PmmhProposal:
    """Blocked Gaussian random walk on the log-parameter scale."""

    blocks: tuple[tuple[int, ...], ...]
    scales: np.ndarray
    adapt: bool = True

    def __post_init__(self):
        flat = sorted(i for b in self.blocks for i in b)
        d = len(self.scales)
        if flat != list(range(d)):
            raise ValueError(f"blocks {self.blocks} do not partition {d} coordinates")
        if np.any(np.asarray(self.scales) < 0):
            raise ValueError("proposal scales must be non-negative")


def default_proposal(d: int, blocks=None, scale: float = 0.3, adapt: bool = True) -> PmmhProposal:
    if blocks is None:
        blocks = tuple((i,) for i in range(d))
    blocks = tuple(tuple(int(i) for i in b) for b in blocks)
    return PmmhProposal(blocks=blocks, scales=np.full(d, float(scale)), adapt=adapt)


def adapt_proposal(u, W, proposal: PmmhProposal) -> PmmhProposal:
    """Rescale the random walk from the weighted spread of the cloud ``u``.

    Each coordinate gets ``2.38 / sqrt(block size)`` times its weighted
    standard deviation, floored at 1e-3.  A cloud with fewer than two
    distinct points leaves the proposal unchanged.
    """
    if not proposal.adapt:
        return proposal
    u = np.atleast_2d(np.asarray(u, dtype=float))
    W = np.asarray(W, dtype=float)
    if u.shape[0] < 2 or np.unique(u, axis=0).shape[0] < 2:
        return proposal
    mean = W @ u
    sd = np.sqrt(np.maximum(W @ (u - mean) ** 2, 0.0))
    if not np.all(np.isfinite(sd)):
        return proposal
    scales = np.array(proposal.scales, dtype=float)
    for block in proposal.blocks:
        idx = list(block)
        scales[idx] = np.maximum(RW_SCALE / math.sqrt(len(idx)) * sd[idx], SCALE_FLOOR)
    return replace(proposal, scales=scales)


# ---------------------------------------------------------------------------
# likelihood engines


class ParticleEngine:
    """Likelihood estimates from bootstrap particle filters."""

    def __init__(self, model, n_x: int, retain: int = 0):
        if n_x < 1:
            raise ValueError(f"n_x must be >= 1, got {n_x}")
        self.model = model
        self.n_x = int(n_x)
        self.retain = int(retain)

    def start_prior(self, theta, y, rng) -> PFState:
        return pf_init(self.model, theta, self.n_x, rng, y_first=y, retain=self.retain)

    def start_bridge(self, theta, bridge, y, rng) -> PFState:
        x = bridge.sample_state(self.model, theta, self.n_x, rng)
        return pf_from_particles(self.model, theta, x, y, retain=self.retain)

    def advance(self, state: PFState, y, rng) -> PFState:
        return pf_step(state, self.model, y, rng)

    def fresh(self, theta, ys, rng, bridge=None) -> PFState:
        x_start = None
        if bridge is not None:
            x_start = bridge.sample_state(self.model, theta, self.n_x, rng)
        return run_pf(self.model, theta, ys, self.n_x, rng, x_start=x_start, retain=self.retain, strict=False)

    def state_mean(self, state: PFState) -> np.ndarray:
        return state.filtered_mean(self.model.state_summary)

    def predict(self, state: PFState, m: int, rng) -> np.ndarray:
        """Per-filter ``E[s(X_{n+1}) | y_{1:n}]`` from ``m`` transition draws per particle."""
        anc = row_multinomial(state.logg, rng)
        parents = np.take_along_axis(state.x, anc.reshape(anc.shape + (1,) * (state.x.ndim - 2)), axis=1)
        total = np.zeros(parents.shape[:2])
        for _ in range(m):
            total += self.model.state_summary(self.model.transition_sample(state.theta, parents, rng))
        return total.mean(axis=1) / m

    @staticmethod
    def concat(states):
        return concat(states)


@dataclass
class KalmanBatch:
    """Exact filters for a batch of parameters ``(tau, lam)``."""

    theta: np.ndarray
    kf: KalmanState
    last_pot: np.ndarray | None = None

    @property
    def cum_loglik(self):
        return self.kf.cum_loglik

    @property
    def n_steps(self):
        return self.kf.step

    def take(self, idx) -> "KalmanBatch":
        kf = replace(self.kf, mean=self.kf.mean[idx], variance=self.kf.variance[idx], cum_loglik=self.kf.cum_loglik[idx])
        return KalmanBatch(self.theta[idx], kf, None if self.last_pot is None else self.last_pot[idx])

    def where(self, mask, other: "KalmanBatch") -> "KalmanBatch":
        kf = replace(
            self.kf,
            mean=np.where(mask, other.kf.mean, self.kf.mean),
            variance=np.where(mask, other.kf.variance, self.kf.variance),
            cum_loglik=np.where(mask, other.kf.cum_loglik, self.kf.cum_loglik),
        )
        theta = np.where(mask[:, None], other.theta, self.theta)
        last = None if self.last_pot is None else np.where(mask, other.last_pot, self.last_pot)
        return KalmanBatch(theta, kf, last)


class KalmanEngine:
    """Exact predictive likelihoods for :class:`~smcfw.models.LinearGaussianModel`."""

    def __init__(self, model):
        self.model = model

    def _params(self, theta):
        theta = np.atleast_2d(theta)
        return Precisions(self.model.tau0, theta[:, 0], theta[:, 1])

    def start_prior(self, theta, y, rng=None) -> KalmanBatch:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        batch = KalmanBatch(theta, kalman_init(self._params(theta)))
        return self.advance(batch, y, rng)

    def start_bridge(self, theta, bridge, y, rng):
        raise NotImplementedError("the exact-likelihood engine has no state particles to bridge")

    def advance(self, state: KalmanBatch, y, rng=None) -> KalmanBatch:
        kf = kalman_step(state.kf, self._params(state.theta), y)
        return KalmanBatch(state.theta, kf, kf.cum_loglik - state.kf.cum_loglik)

    def fresh(self, theta, ys, rng=None, bridge=None) -> KalmanBatch:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        params = self._params(theta)
        kf = kalman_init(params)
        prev = kf.cum_loglik
        with np.errstate(all="ignore"):
            for y in ys:
                prev = kf.cum_loglik
                kf = kalman_step(kf, params, y)
            cum = np.where(np.isfinite(kf.cum_loglik), kf.cum_loglik, -np.inf)
        kf = replace(kf, cum_loglik=cum)
        return KalmanBatch(theta, kf, cum - prev)

    def state_mean(self, state: KalmanBatch) -> np.ndarray:
        return np.asarray(state.kf.mean)

    def predict(self, state: KalmanBatch, m: int, rng=None) -> np.ndarray:
        # the random walk preserves the mean
        return np.asarray(state.kf.mean)

    @staticmethod
    def concat(states):
        if len(states) == 1:
            return states[0]
        kf = replace(
            states[0].kf,
            mean=np.concatenate([s.kf.mean for s in states]),
            variance=np.concatenate([s.kf.variance for s in states]),
            cum_loglik=np.concatenate([s.kf.cum_loglik for s in states]),
        )
        last = None if states[0].last_pot is None else np.concatenate([s.last_pot for s in states])
        return KalmanBatch(np.concatenate([s.theta for s in states]), kf, last)


def _last_potential(state) -> np.ndarray:
    return state.last_pot


# ---------------------------------------------------------------------------
# configuration and state


@dataclass(frozen=True)
class Smc2Config:
    n_theta: int
    n_x: int = 100
    ess_threshold: float = 0.5
    pmmh_sweeps: int = 1
    blocks: tuple | None = None
    init_scale: float = 0.3
    adapt: bool = True
    resample_every_step: bool = False
    chunk_size: int = 256
    retain: int = 0
    predict_samples: int = 0

    def __post_init__(self):
        if self.n_theta < 1 or self.n_x < 1:
            raise ValueError("particle counts must be >= 1")
        if not 0.0 <= self.ess_threshold <= 1.0:
            raise ValueError(f"ess_threshold must lie in [0, 1], got {self.ess_threshold}")
        if self.pmmh_sweeps < 0:
            raise ValueError("pmmh_sweeps must be >= 0")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


@dataclass
class Smc2State:
    """Weighted theta-particles with their filters, at observation ``time``.

    ``window`` holds the observations the filters have absorbed; its first
    element is observation ``window_start`` (1-based).  ``bridge`` is set in
    windowed mode and replaces the prior in rejuvenation moves.
    """

    model: object
    engine: object
    config: Smc2Config
    seed: int
    theta: np.ndarray
    pf: object
    logw: np.ndarray
    time: int
    window_start: int
    window: list
    log_evidence: float
    proposal: PmmhProposal
    rejuvenation_log: list = field(default_factory=list)
    bridge: object = None
    bridge_power: float = 1.0
    last_increment: float = 0.0
    last_ess: float = float("nan")
    resampled: bool = False

    @property
    def n_theta(self) -> int:
        return self.theta.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return normalize(self.logw)

    @property
    def unconstrained(self) -> np.ndarray:
        return self.model.to_unconstrained(self.theta)


def _slices(state_or_n, config: Smc2Config):
    n = state_or_n if isinstance(state_or_n, int) else state_or_n.n_theta
    return streams.chunks(n, config.chunk_size)


def make_engine(model, config: Smc2Config, exact: bool = False):
    if exact:
        return KalmanEngine(model)
    return ParticleEngine(model, config.n_x, retain=config.retain)


def smc2_init(model, config: Smc2Config, y1, seed: int, exact: bool = False) -> Smc2State:
    """Draw the parameter cloud from the prior and absorb the first observation."""
    engine = make_engine(model, config, exact)
    slices = _slices(config.n_theta, config)

    def work(c, s):
        n = s.stop - s.start
        theta = model.prior_sample(streams.stream(seed, streams.PRIOR, c), n)
        return theta, engine.start_prior(theta, y1, streams.stream(seed, streams.STEP, 1, c))

    parts = streams.map_chunks(work, slices)
    theta = np.concatenate([p[0] for p in parts])
    pf = engine.concat([p[1] for p in parts])
    pot = _last_potential(pf)
    state = Smc2State(
        model=model,
        engine=engine,
        config=config,
        seed=int(seed),
        theta=theta,
        pf=pf,
        logw=np.zeros(config.n_theta),
        time=0,
        window_start=1,
        window=[],
        log_evidence=0.0,
        proposal=default_proposal(model.dim_theta, config.blocks, config.init_scale, config.adapt),
    )
    return _absorb(state, pot, y1, 1)


def _absorb(state: Smc2State, pot, y, t) -> Smc2State:
    """Reweight by the new potentials, update the evidence, maybe rejuvenate."""
    W = normalize(state.logw)
    with np.errstate(divide="ignore"):
        inc = float(logsumexp(np.log(W) + pot))
    logw = state.logw + pot
    state = replace(state, logw=logw, time=t, window=state.window + [y],
                    log_evidence=state.log_evidence + inc, last_increment=inc, resampled=False)
    value = ess(logw)
    state.last_ess = value
    cfg = state.config
    if cfg.resample_every_step or value < cfg.ess_threshold * state.n_theta:
        state = rejuvenate(state, t)
    return state


def smc2_step(state: Smc2State, y, t: int | None = None) -> Smc2State:
    """Absorb the next observation (works for exact and particle engines)."""
    t = state.time + 1 if t is None else t
    engine = state.engine
    slices = _slices(state, state.config)

    def work(c, s):
        return engine.advance(state.pf.take(s), y, streams.stream(state.seed, streams.STEP, t, c))

    pf = engine.concat(streams.map_chunks(work, slices))
    state = replace(state, pf=pf)
    return _absorb(state, _last_potential(pf), y, t)


def ibis_exact_step(state: Smc2State, y, t: int | None = None) -> Smc2State:
    """Step of the exact-likelihood sampler (state built with ``exact=True``)."""
    if not isinstance(state.engine, KalmanEngine):
        raise TypeError("ibis_exact_step needs a state created with exact=True")
    return smc2_step(state, y, t)


def pmmh_kernel(theta, pf, window, proposal: PmmhProposal, model, engine, rng,
                bridge=None, bridge_power: float = 1.0):
    """One sweep of blocked PMMH moves over the window; returns ``(theta, pf, accepted)``.

    The likelihood of the current point is the stored estimate; a fresh
    filter is run only for the proposal, and kept on acceptance.  Without a
    bridge the prior is the model prior on the log scale; with one, it is
    the bridge's kernel density raised to ``bridge_power`` and the fresh
    filter starts from bridge states.
    """
    u = model.to_unconstrained(theta)
    ys = np.asarray(window, dtype=float)
    m = u.shape[0]
    accepted = np.zeros((len(proposal.blocks), m), dtype=bool)

    def log_prior(v):
        if bridge is None:
            return model.prior_logdensity_unconstrained(v)
        return bridge_power * bridge.marginal_logdensity(v)

    for b, block in enumerate(proposal.blocks):
        idx = list(block)
        u_new = u.copy()
        u_new[:, idx] += proposal.scales[idx] * rng.standard_normal((m, len(idx)))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            theta_new = model.from_unconstrained(u_new)
            pf_new = engine.fresh(theta_new, ys, rng, bridge)
            log_alpha = log_prior(u_new) - log_prior(u) + pf_new.cum_loglik - pf.cum_loglik
        log_alpha = np.where(np.isnan(log_alpha), -np.inf, log_alpha)
        accept = np.log(rng.random(m)) < log_alpha
        accepted[b] = accept
        u = np.where(accept[:, None], u_new, u)
        theta = np.where(accept[:, None], theta_new, theta)
        pf = pf.where(accept, pf_new)
    return theta, pf, accepted


def rejuvenate(state: Smc2State, t: int) -> Smc2State:
    """Systematic resampling followed by ``pmmh_sweeps`` PMMH sweeps."""
    start = _time.perf_counter()
    W = normalize(state.logw)
    proposal = adapt_proposal(state.unconstrained, W, state.proposal)
    idx = resample_systematic(state.logw, state.n_theta, streams.stream(state.seed, streams.RESAMPLE, t))
    theta, pf = state.theta[idx], state.pf.take(idx)
    slices = _slices(state, state.config)
    rates = []
    for sweep in range(state.config.pmmh_sweeps):
        def work(c, s, theta=theta, pf=pf, sweep=sweep):
            rng = streams.stream(state.seed, streams.MOVE, t, sweep, c)
            return pmmh_kernel(theta[s], pf.take(s), state.window, proposal, state.model,
                               state.engine, rng, state.bridge, state.bridge_power)

        parts = streams.map_chunks(work, slices)
        theta = np.concatenate([p[0] for p in parts])
        pf = state.engine.concat([p[1] for p in parts])
        rates.append(np.concatenate([p[2] for p in parts], axis=1).mean(axis=1))
    elapsed = _time.perf_counter() - start
    acceptance = np.mean(rates, axis=0) if rates else np.zeros(len(proposal.blocks))
    log = state.rejuvenation_log + [{
        "time": t,
        "acceptance": acceptance.tolist(),
        "seconds": elapsed,
        "window": len(state.window),
    }]
    return replace(state, theta=theta, pf=pf, logw=np.zeros(state.n_theta), proposal=proposal,
                   rejuvenation_log=log, resampled=True)


# ---------------------------------------------------------------------------
# estimates


def estimate(state: Smc2State, phi) -> float:
    """Self-normalised estimate of ``phi(theta, filters)`` (one value per theta-particle)."""
    W = normalize(state.logw)
    return float(W @ np.asarray(phi(state.theta, state.pf), dtype=float))


def theta_moments(state: Smc2State):
    """Weighted mean and standard deviation of each parameter (natural scale)."""
    W = normalize(state.logw)
    mean = W @ state.theta
    sd = np.sqrt(np.maximum(W @ (state.theta - mean) ** 2, 0.0))
    return mean, sd


def theta_quantiles(state: Smc2State, probs) -> np.ndarray:
    """Weighted quantiles, shape ``(len(probs), d)``."""
    W = normalize(state.logw)
    out = np.empty((len(probs), state.theta.shape[1]))
    for k in range(state.theta.shape[1]):
        order = np.argsort(state.theta[:, k], kind="stable")
        cdf = np.cumsum(W[order])
        pos = np.searchsorted(cdf, np.asarray(probs) * cdf[-1])
        out[:, k] = state.theta[order, k][np.minimum(pos, len(order) - 1)]
    return out


def state_mean(state: Smc2State) -> float:
    return estimate(state, lambda theta, pf: state.engine.state_mean(pf))


def predict_state(state: Smc2State, m: int, t: int) -> float:
    """``E[s(X_{t}) | y_{1:t-1}]`` from the cloud at ``t - 1`` with ``m`` draws per particle."""
    W = normalize(state.logw)
    slices = _slices(state, state.config)

    def work(c, s):
        return state.engine.predict(state.pf.take(s), m, streams.stream(state.seed, streams.PREDICT, t, c))

    per = np.concatenate(streams.map_chunks(work, slices))
    return float(W @ per)
