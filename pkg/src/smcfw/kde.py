"""Kernel-density bridge between observation blocks.

At the end of a block the sampler keeps ``N`` pairs ``(u_j, xbar_j)``:
parameter values on the log scale and one terminal state each.  The next
block starts from a Gaussian kernel smoothing of the ``u_j`` and from states
propagated one step out of uniformly chosen ``xbar_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)


def bandwidth_rule_a3(n: int, d: int) -> float:
    """Consistency bandwidth ``N ** (-1 / (2 (d + 1)))``."""
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    return float(n) ** (-1.0 / (2.0 * (d + 1)))


def gaussian_kernel(z) -> np.ndarray:
    """Standard Gaussian kernel on R^d evaluated along the last axis."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    d = z.shape[-1]
    return np.exp(-0.5 * np.sum(z * z, axis=-1) - 0.5 * d * LOG_2PI)


@dataclass(frozen=True)
class KdeBridge:
    """Gaussian KDE on the unconstrained parameter scale plus terminal states.

    ``support_u`` has shape ``(N, d)``; ``support_x`` has one terminal state
    per support point.  The kernel is ``N(0, h^2 I_d)``.
    """

    support_u: np.ndarray
    support_x: np.ndarray
    h: float

    def __post_init__(self):
        u = np.asarray(self.support_u, dtype=float)
        if u.ndim != 2 or u.shape[0] < 1:
            raise ValueError("support_u must have shape (N, d) with N >= 1")
        if not np.all(np.isfinite(u)):
            raise ValueError("support parameters must be finite")
        if not self.h > 0:
            raise ValueError(f"bandwidth must be positive, got {self.h!r}")
        if len(self.support_x) != u.shape[0]:
            raise ValueError("support_x and support_u lengths differ")

    @property
    def size(self) -> int:
        return self.support_u.shape[0]

    @property
    def dim(self) -> int:
        return self.support_u.shape[1]

    def max_density(self) -> float:
        """``sup_u`` of the kernel density, ``h^-d K(0)``."""
        return self.h ** (-self.dim) * (2 * math.pi) ** (-self.dim / 2)

    def sample_theta(self, rng: np.random.Generator, size: int):
        return kde_sample_theta(self, rng, size)

    def marginal_logdensity(self, u) -> np.ndarray:
        return kde_marginal_logdensity(self, u)

    def sample_state(self, model, theta, n_x: int, rng: np.random.Generator) -> np.ndarray:
        return bridge_sample_state(self, theta, model, n_x, rng)


def kde_sample_theta(bridge: KdeBridge, rng: np.random.Generator, size: int = 1):
    """Draw ``size`` parameters from the KDE; returns ``(u, j)``."""
    j = rng.integers(0, bridge.size, size=size)
    eps = rng.standard_normal((size, bridge.dim))
    return bridge.support_u[j] + bridge.h * eps, j


def kde_marginal_logdensity(bridge: KdeBridge, u) -> np.ndarray:
    """``log (1/N) sum_j N(u; u_j, h^2 I)`` for each row of ``u``.

    Costs O(N d) per evaluation point; no pairwise product over the cloud is
    formed.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    h, d = bridge.h, bridge.dim
    z = (u[:, None, :] - bridge.support_u[None, :, :]) / h
    logk = -0.5 * np.sum(z * z, axis=-1) - 0.5 * d * LOG_2PI - d * math.log(h)
    return logsumexp(logk, axis=1) - math.log(bridge.size)


def bridge_sample_state(bridge: KdeBridge, theta, model, n_x: int, rng: np.random.Generator) -> np.ndarray:
    """``n_x`` states per parameter row, each moved one step from a uniform ``xbar_j``.

    Source indices are drawn independently for every state particle.
    """
    theta = np.atleast_2d(theta)
    j = rng.integers(0, bridge.size, size=(theta.shape[0], n_x))
    parents = np.asarray(bridge.support_x)[j]
    return model.transition_sample(theta, parents, rng)
