"""Scalar Kalman filter for the random-walk-plus-noise model.

All functions broadcast: ``tau``, ``lam`` and the state fields may be numpy
arrays, in which case one filter runs per element (this is how the exact
likelihood sampler tracks thousands of parameter values at once).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray | float
    variance: np.ndarray | float
    step: int
    cum_loglik: np.ndarray | float


def _precisions(params):
    return (
        np.asarray(params.tau0, dtype=float),
        np.asarray(params.tau, dtype=float),
        np.asarray(params.lam, dtype=float),
    )


def kalman_init(params) -> KalmanState:
    tau0, tau, lam = _precisions(params)
    shape = np.broadcast(tau0, tau, lam).shape
    if not shape:
        return KalmanState(mean=0.0, variance=1.0 / float(tau0), step=0, cum_loglik=0.0)
    variance = np.broadcast_to(1.0 / tau0, shape).copy()
    return KalmanState(mean=np.zeros(shape), variance=variance, step=0, cum_loglik=np.zeros(shape))


def kalman_predictive(state: KalmanState, params):
    """Mean and variance of ``y_{k+1}`` given ``y_{1:k}``."""
    _, tau, lam = _precisions(params)
    return state.mean, state.variance + 1.0 / tau + 1.0 / lam


def kalman_step(state: KalmanState, params, y: float) -> KalmanState:
    _, tau, lam = _precisions(params)
    p_pred = state.variance + 1.0 / tau
    s = p_pred + 1.0 / lam
    resid = y - state.mean
    inc = -0.5 * (LOG_2PI + np.log(s) + resid * resid / s)
    gain = p_pred / s
    return replace(
        state,
        mean=state.mean + gain * resid,
        variance=p_pred * (1.0 / lam) / s,
        step=state.step + 1,
        cum_loglik=state.cum_loglik + inc,
    )


def kalman_loglik(params, y) -> np.ndarray | float:
    """Total log-likelihood ``log p(y_{1:n})``; zero for an empty series."""
    state = kalman_init(params)
    for obs in np.asarray(y, dtype=float):
        state = kalman_step(state, params, obs)
    return state.cum_loglik


@dataclass(frozen=True)
class Precisions:
    """Lightweight parameter holder accepting arrays (for batched filters)."""

    tau0: np.ndarray | float
    tau: np.ndarray | float
    lam: np.ndarray | float
