"""Bootstrap particle filters run in batches, plus resampling primitives.

A :class:`PFState` holds ``M`` independent filters at once, one per
theta-particle, each with ``n_x`` state particles.  Inner resampling is
multinomial at every step so that the sampled ancestry has exactly the law
used in the SMC2 extended target; the cheaper systematic scheme is only
offered for the outer (theta) level.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import DegenerateWeightsError


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class Weights:
    """Unnormalised log-weights and their normalised counterpart."""

    logw: np.ndarray
    normalized: np.ndarray

    @classmethod
    def from_log(cls, logw) -> "Weights":
        return cls(np.asarray(logw, dtype=float), normalize(logw))


def normalize(logw) -> np.ndarray:
    """Normalised weights via max subtraction."""
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegenerateWeightsError("no finite log-weight")
    w = np.exp(logw - top)
    return w / w.sum()


def log_mean_exp(logw, axis=-1) -> np.ndarray:
    """``log mean(exp(logw))`` along ``axis``; ``-inf`` where every entry is ``-inf``."""
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.mean(np.exp(logw - top), axis=axis))
    return out + np.squeeze(top, axis=axis)


def ess(w) -> float:
    """Effective sample size ``1 / sum(W_i^2)``; accepts log-weights or Weights."""
    if isinstance(w, Weights):
        W = w.normalized
    else:
        W = normalize(w)
    return float(1.0 / np.dot(W, W))


def _as_probabilities(w) -> np.ndarray:
    if isinstance(w, Weights):
        return w.normalized
    return normalize(w)


def resample_multinomial(w, n_out: int, rng: np.random.Generator) -> np.ndarray:
    W = _as_probabilities(w)
    cdf = np.cumsum(W)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, rng.random(n_out), side="right"), W.size - 1)


def resample_systematic(w, n_out: int, rng: np.random.Generator) -> np.ndarray:
    W = _as_probabilities(w)
    cdf = np.cumsum(W)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(n_out)) / n_out
    return np.minimum(np.searchsorted(cdf, u, side="right"), W.size - 1)


@njit(cache=True, nogil=True)
def _merge_sorted(w, e, out):
    # sorted uniforms from normalised exponential spacings, merged against the cdf
    m, n = w.shape
    k = out.shape[1]
    for r in range(m):
        total = 0.0
        for j in range(n):
            total += w[r, j]
        s = 0.0
        for i in range(k + 1):
            s += e[r, i]
        scale = total / s
        acc = 0.0
        j = 0
        cw = w[r, 0]
        for i in range(k):
            acc += e[r, i]
            u = acc * scale
            while cw <= u and j < n - 1:
                j += 1
                cw += w[r, j]
            out[r, i] = j


def row_multinomial(logw: np.ndarray, rng: np.random.Generator, strict: bool = True) -> np.ndarray:
    """Independent multinomial draws for every row of ``logw``.

    Row ``m`` yields ``n`` indices drawn i.i.d. with probabilities
    proportional to ``exp(logw[m])``.  The draws are returned sorted within
    each row (order statistics of uniforms built from exponential spacings),
    which leaves the multiset of ancestors with the multinomial law.  A row
    without any finite entry raises unless ``strict`` is off, in which case
    it is drawn uniformly.
    """
    m, n = logw.shape
    top = logw.max(axis=1, keepdims=True)
    dead = ~np.isfinite(top[:, 0])
    if np.any(dead):
        if strict:
            bad = np.flatnonzero(dead)
            raise DegenerateWeightsError(f"all observation densities vanished for filter(s) {bad[:5].tolist()}")
        logw = np.where(dead[:, None], 0.0, logw)
        top = np.where(dead[:, None], 0.0, top)
    w = np.exp(logw - top)
    e = rng.standard_exponential((m, n + 1))
    out = np.empty((m, n), dtype=np.int64)
    _merge_sorted(w, e, out)
    return out


# ---------------------------------------------------------------------------
# particle filter state


@dataclass
class PFState:
    """A batch of bootstrap filters sharing a window of observations.

    ``x`` holds the current state particles (before selection by the latest
    observation) and ``logg`` their log observation densities.  The step
    potential is the log of the average observation density across the
    inner particles; ``last_pot`` is the latest one and ``cum_loglik`` their
    running sum (the log of the unbiased likelihood estimate over the
    window).  With ``retain > 0`` the last ``retain`` potentials, particle
    sets and ancestor vectors are kept in ``logpot``/``paths``/``ancestors``.
    """

    theta: np.ndarray
    x: np.ndarray
    logg: np.ndarray
    cum_loglik: np.ndarray
    last_pot: np.ndarray | None = None
    n_steps: int = 0
    fresh: bool = True
    retain: int = 0
    logpot: list = field(default_factory=list)
    paths: list = field(default_factory=list)
    ancestors: list = field(default_factory=list)

    @property
    def n_filters(self) -> int:
        return self.x.shape[0]

    @property
    def n_x(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "PFState":
        """Filters ``idx`` (with repetition), histories included."""
        return replace(
            self,
            theta=self.theta[idx],
            x=self.x[idx],
            logg=self.logg[idx],
            cum_loglik=self.cum_loglik[idx],
            last_pot=None if self.last_pot is None else self.last_pot[idx],
            logpot=[p[idx] for p in self.logpot],
            paths=[p[idx] for p in self.paths],
            ancestors=[a[idx] for a in self.ancestors],
        )

    def where(self, mask, other: "PFState") -> "PFState":
        """Row-wise merge: filter ``m`` comes from ``other`` where ``mask[m]``."""
        if other.n_steps != self.n_steps:
            raise ValueError("cannot merge filters with different step counts")

        def pick(a, b):
            shape = (-1,) + (1,) * (np.ndim(a) - 1)
            return np.where(mask.reshape(shape), b, a)

        return replace(
            self,
            theta=pick(self.theta, other.theta),
            x=pick(self.x, other.x),
            logg=pick(self.logg, other.logg),
            cum_loglik=pick(self.cum_loglik, other.cum_loglik),
            last_pot=None if self.last_pot is None else pick(self.last_pot, other.last_pot),
            logpot=[pick(a, b) for a, b in zip(self.logpot, other.logpot)],
            paths=[pick(a, b) for a, b in zip(self.paths, other.paths)],
            ancestors=[pick(a, b) for a, b in zip(self.ancestors, other.ancestors)],
        )

    def filtered_mean(self, fn) -> np.ndarray:
        """Per-filter weighted mean of ``fn(x)`` under the latest observation."""
        w = np.exp(self.logg - self.logg.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        return np.sum(w * fn(self.x), axis=1)


def concat(states: list[PFState]) -> PFState:
    """Stack batches of filters that have absorbed the same observations."""
    first = states[0]
    if len(states) == 1:
        return first
    return replace(
        first,
        theta=np.concatenate([s.theta for s in states]),
        x=np.concatenate([s.x for s in states]),
        logg=np.concatenate([s.logg for s in states]),
        cum_loglik=np.concatenate([s.cum_loglik for s in states]),
        last_pot=None if first.last_pot is None else np.concatenate([s.last_pot for s in states]),
        logpot=[np.concatenate(p) for p in zip(*[s.logpot for s in states])],
        paths=[np.concatenate(p) for p in zip(*[s.paths for s in states])],
        ancestors=[np.concatenate(a) for a in zip(*[s.ancestors for s in states])],
    )


def _record(state: PFState, x, anc):
    if state.retain <= 0:
        return [], []
    paths = (state.paths + [x])[-state.retain:]
    ancestors = (state.ancestors + [anc])[-state.retain:]
    return paths, ancestors


def pf_init(model, theta, n_x: int, rng: np.random.Generator, y_first=None, retain: int = 0) -> PFState:
    """Draw ``n_x`` particles from the initial law for each parameter row.

    The first observation is attached to ``x_1``, so when ``y_first`` is
    given the particles are moved once through the transition before being
    weighted.
    """
    if n_x < 1:
        raise ValueError(f"n_x must be >= 1, got {n_x}")
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    x0 = model.init_sample(theta, n_x, rng)
    m = theta.shape[0]
    state = PFState(
        theta=theta,
        x=x0,
        logg=np.zeros((m, n_x)),
        cum_loglik=np.zeros(m),
        retain=retain,
    )
    if y_first is not None:
        state = pf_step(state, model, y_first, rng)
    return state


def pf_from_particles(model, theta, x, y, retain: int = 0) -> PFState:
    """Start a window at particles ``x`` that already sit at the time of ``y``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    state = PFState(
        theta=theta,
        x=x,
        logg=np.zeros(x.shape[:2]),
        cum_loglik=np.zeros(theta.shape[0]),
        retain=retain,
    )
    anc = np.broadcast_to(np.arange(x.shape[1]), x.shape[:2])
    state.paths, state.ancestors = _record(state, x, anc)
    return pf_weight(state, model, y)


def pf_extend(state: PFState, model, rng: np.random.Generator, strict: bool = True) -> PFState:
    """Select ancestors by the latest observation and propagate (no weighting)."""
    if state.fresh:
        anc = np.broadcast_to(np.arange(state.n_x), state.x.shape[:2])
        parents = state.x
    else:
        anc = row_multinomial(state.logg, rng, strict)
        parents = np.take_along_axis(state.x, anc.reshape(anc.shape + (1,) * (state.x.ndim - 2)), axis=1)
    x_new = model.transition_sample(state.theta, parents, rng)
    paths, ancestors = _record(state, x_new, anc)
    return replace(state, x=x_new, logg=np.zeros(state.x.shape[:2]), fresh=True, paths=paths, ancestors=ancestors)


def pf_weight(state: PFState, model, y) -> PFState:
    """Weight the current particles by ``y`` and record the step potential."""
    logg = model.obs_logdensity(state.theta, state.x, y)
    logg = np.where(np.isnan(logg), -np.inf, logg)
    with np.errstate(divide="ignore"):
        pot = log_mean_exp(logg, axis=1)
    logpot = (state.logpot + [pot])[-state.retain:] if state.retain > 0 else []
    return replace(
        state,
        logg=logg,
        fresh=False,
        cum_loglik=state.cum_loglik + pot,
        last_pot=pot,
        n_steps=state.n_steps + 1,
        logpot=logpot,
    )


def pf_step(state: PFState, model, y, rng: np.random.Generator, extend_only: bool = False,
            strict: bool = True) -> PFState:
    """One bootstrap step: multinomial selection, propagation, weighting.

    With ``extend_only`` the weighting is skipped, leaving the filter one
    step ahead with no potential recorded.
    """
    state = pf_extend(state, model, rng, strict)
    if extend_only:
        return state
    return pf_weight(state, model, y)


def run_pf(model, theta, ys, n_x: int, rng: np.random.Generator, x_start=None, retain: int = 0,
           strict: bool = True) -> PFState:
    """Filter the whole window ``ys`` from scratch.

    Starts from the initial law when ``x_start`` is None, otherwise from the
    supplied particles positioned at the time of ``ys[0]``.
    Filters whose particles all receive zero density raise unless
    ``strict`` is off; their likelihood estimate is then ``-inf``.
    """
    ys = np.asarray(ys, dtype=float)
    if ys.size == 0:
        raise ValueError("window must contain at least one observation")
    if x_start is None:
        state = pf_init(model, theta, n_x, rng, y_first=ys[0], retain=retain)
    else:
        state = pf_from_particles(model, theta, x_start, ys[0], retain=retain)
    for y in ys[1:]:
        state = pf_step(state, model, y, rng, strict=strict)
    return state
