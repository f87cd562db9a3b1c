"""Exact Feynman-Kac computations on finite state spaces.

Measures are probability vectors, potentials are positive vectors and
Markov kernels are row-stochastic matrices.  The flow follows the usual
convention: ``eta_{p} = Phi_p(eta_{p-1})`` with
``Phi_p(mu) = mu(G_{p-1} M_p) / mu(G_{p-1})``, so the model
``FiniteFK(init, potentials=[G_0..G_{T-1}], kernels=[M_1..M_T])`` has
marginals ``eta_0..eta_T``.

The second half of the module holds the exact posteriors of
:class:`~smcfw.models.FiniteHMM` (forward recursions on a parameter grid)
that serve as ground truth for the samplers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import DegenerateWeightsError

ROW_TOL = 1e-12


# ---------------------------------------------------------------------------
# finite Feynman-Kac models


@dataclass(frozen=True)
class FiniteFK:
    """Finite Feynman-Kac model with ``T = len(kernels)`` steps."""

    init: np.ndarray
    potentials: tuple
    kernels: tuple

    def __post_init__(self):
        init = np.asarray(self.init, dtype=float)
        if np.any(init < 0) or abs(init.sum() - 1.0) > ROW_TOL:
            raise ValueError("init must be a probability vector")
        if len(self.potentials) != len(self.kernels):
            raise ValueError("need one potential per kernel")
        size = init.size
        for p, (G, M) in enumerate(zip(self.potentials, self.kernels)):
            G, M = np.asarray(G, dtype=float), np.asarray(M, dtype=float)
            if G.shape != (size,) or np.any(G <= 0):
                raise ValueError(f"potential {p} must be a positive vector of length {size}")
            if M.ndim != 2 or M.shape[0] != size or np.any(M < 0):
                raise ValueError(f"kernel {p + 1} has the wrong shape or negative entries")
            if np.max(np.abs(M.sum(axis=1) - 1.0)) > ROW_TOL:
                raise ValueError(f"rows of kernel {p + 1} do not sum to 1")
            size = M.shape[1]

    @property
    def n_steps(self) -> int:
        return len(self.kernels)


def phi_map(mu, G, M) -> np.ndarray:
    """Selection by ``G`` followed by mutation by ``M``."""
    mu = np.asarray(mu, dtype=float)
    weighted = mu * np.asarray(G, dtype=float)
    total = weighted.sum()
    if not total > 0:
        raise DegenerateWeightsError("mu(G) = 0")
    out = (weighted / total) @ np.asarray(M, dtype=float)
    out = np.maximum(out, 0.0)
    return out / out.sum()


def phi_st(fk: FiniteFK, s: int, t: int, mu) -> np.ndarray:
    """``Phi_{s,t}(mu)``: the flow from time ``s`` to ``t`` started at ``mu``."""
    if not 0 <= s <= t <= fk.n_steps:
        raise ValueError(f"need 0 <= s <= t <= {fk.n_steps}")
    out = np.asarray(mu, dtype=float)
    for p in range(s, t):
        out = phi_map(out, fk.potentials[p], fk.kernels[p])
    return out


def semigroup(fk: FiniteFK, s: int, t: int) -> np.ndarray:
    """Unnormalised kernel ``Q_{s,t} = diag(G_s) M_{s+1} ... diag(G_{t-1}) M_t``."""
    Q = np.eye(np.asarray(fk.init).size if s == 0 else np.asarray(fk.kernels[s - 1]).shape[1])
    for p in range(s, t):
        Q = (Q * np.asarray(fk.potentials[p])[None, :]) @ np.asarray(fk.kernels[p])
    return Q


def normalized_semigroup(fk: FiniteFK, s: int, t: int) -> np.ndarray:
    """Markov kernel ``P_{s,t}(x, .) = Q_{s,t}(x, .) / Q_{s,t}(1)(x)``."""
    Q = semigroup(fk, s, t)
    return Q / Q.sum(axis=1, keepdims=True)


def exact_marginals(fk: FiniteFK):
    """Marginals ``eta_0..eta_T`` and ``log gamma_n(1)`` for ``n = 0..T``."""
    etas = [np.asarray(fk.init, dtype=float)]
    log_z = [0.0]
    for G, M in zip(fk.potentials, fk.kernels):
        mass = float(etas[-1] @ np.asarray(G, dtype=float))
        if not mass > 0:
            raise DegenerateWeightsError("potential vanishes on the support of the flow")
        log_z.append(log_z[-1] + math.log(mass))
        etas.append(phi_map(etas[-1], G, M))
    return etas, np.array(log_z)


def total_variation(mu, rho) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(mu, dtype=float) - np.asarray(rho, dtype=float))))


def dobrushin(P) -> float:
    """Largest total-variation distance between two rows of ``P``."""
    P = np.asarray(P, dtype=float)
    diff = np.abs(P[:, None, :] - P[None, :, :]).sum(axis=-1)
    return float(0.5 * diff.max())


def column_minorization(M) -> float:
    """``sum_z min_x M(x, z)``: mass of the common component of all rows."""
    return float(np.asarray(M, dtype=float).min(axis=0).sum())


def pairwise_minorization(M) -> float:
    """Largest ``e`` with ``M(x, .) >= e M(y, .)`` for every pair of rows."""
    M = np.asarray(M, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = M[:, None, :] / M[None, :, :]
    ratio = np.where(M[None, :, :] > 0, ratio, np.inf)
    return float(min(1.0, ratio.min()))


@dataclass(frozen=True)
class Minorization:
    """Per-step constants: ``delta_p`` for ``G_p`` and ``epsilon_p`` for ``M_{p+1}``."""

    delta: np.ndarray
    epsilon: np.ndarray
    epsilon_pairwise: np.ndarray

    def over(self, s: int, t: int):
        """Worst constants on the steps used by ``Phi_{s,t}``."""
        if t <= s:
            return 1.0, 1.0
        return float(self.delta[s:t].max()), float(self.epsilon[s:t].min())


def minorization_constants(fk: FiniteFK) -> Minorization:
    """Potential ratios and kernel minorization constants.

    ``epsilon_p`` is the column-minima constant; the pairwise domination
    constant of every kernel is kept alongside as a cross-check (it is never
    larger, and both vanish together only when some column has a zero).
    """
    delta = np.array([np.max(G) / np.min(G) for G in fk.potentials])
    eps = np.array([column_minorization(M) for M in fk.kernels])
    pair = np.array([pairwise_minorization(M) for M in fk.kernels])
    return Minorization(delta=delta, epsilon=eps, epsilon_pairwise=pair)


@dataclass(frozen=True)
class ContractionResult:
    lhs: float
    bound: float
    delta: float
    epsilon: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.bound * (1.0 + 1e-12) + 1e-15

    @property
    def vacuous(self) -> bool:
        return not self.epsilon > 0


def contraction_check(fk: FiniteFK, s: int, t: int, mu, rho, constants: Minorization | None = None,
                      factor: float = 2.0) -> ContractionResult:
    """Both sides of ``|Phi_st(mu) - Phi_st(rho)|_tv <= 2 (delta/eps)^2 (1 - eps^2)^(t-s) |mu - rho|_tv``.

    ``factor`` replaces the leading 2 (used to plant violations in negative
    controls).  With ``epsilon = 0`` the bound is reported as infinite.
    """
    constants = minorization_constants(fk) if constants is None else constants
    delta, eps = constants.over(s, t)
    lhs = total_variation(phi_st(fk, s, t, mu), phi_st(fk, s, t, rho))
    if not eps > 0:
        return ContractionResult(lhs, math.inf, delta, eps)
    bound = factor * (delta / eps) ** 2 * (1.0 - eps * eps) ** (t - s) * total_variation(mu, rho)
    return ContractionResult(lhs, bound, delta, eps)


# ---------------------------------------------------------------------------
# bias across blocks


def bias_check(fk1: FiniteFK, fk2: FiniteFK, phi) -> float:
    """``|eta_T^1(phi) - eta_T^2(phi)|`` for two models sharing their potentials."""
    if fk1.n_steps != fk2.n_steps:
        raise ValueError("models must have the same number of steps")
    for G1, G2 in zip(fk1.potentials, fk2.potentials):
        if not np.array_equal(np.asarray(G1), np.asarray(G2)):
            raise ValueError("models must share their potentials")
    phi = np.asarray(phi, dtype=float)
    return abs(float(exact_marginals(fk1)[0][-1] @ phi) - float(exact_marginals(fk2)[0][-1] @ phi))


@dataclass(frozen=True)
class BlockChain:
    """A block of ``T`` steps repeated ``n_blocks`` times, perturbed at block starts.

    The exact flow runs the block model back to back; the perturbed flow
    additionally applies ``perturb`` (a Markov kernel standing in for the
    bridge error) to the marginal at the start of every block after the
    first.
    """

    block: FiniteFK
    perturb: np.ndarray
    n_blocks: int

    @property
    def window(self) -> int:
        return self.block.n_steps


def block_biases(chain: BlockChain, phi, init=None) -> np.ndarray:
    """``B(bT, phi)`` for ``b = 1..n_blocks`` (the first entry is always 0)."""
    phi = np.asarray(phi, dtype=float)
    exact = np.asarray(chain.block.init if init is None else init, dtype=float)
    approx = exact.copy()
    T = chain.window
    out = []
    for b in range(chain.n_blocks):
        if b > 0:
            approx = approx @ chain.perturb
        exact = phi_st(chain.block, 0, T, exact)
        approx = phi_st(chain.block, 0, T, approx)
        out.append(abs(float(exact @ phi) - float(approx @ phi)))
    return np.array(out)


def periodic_point(block: FiniteFK, tol: float = 1e-14, max_iter: int = 10_000) -> np.ndarray:
    """Fixed point of the block map ``mu -> Phi_{0,T}(mu)``, by iteration."""
    mu = np.asarray(block.init, dtype=float)
    for _ in range(max_iter):
        nxt = phi_st(block, 0, block.n_steps, mu)
        if np.max(np.abs(nxt - mu)) < tol:
            return nxt
        mu = nxt
    return mu


def initial_perturbation_bias(block: FiniteFK, perturb, phi) -> float:
    """``|Phi_{0,T}(eta_0)(phi) - Phi_{0,T}(eta_0 K)(phi)|`` for one block."""
    mu = np.asarray(block.init, dtype=float)
    phi = np.asarray(phi, dtype=float)
    T = block.n_steps
    return abs(float(phi_st(block, 0, T, mu) @ phi) - float(phi_st(block, 0, T, mu @ perturb) @ phi))


# ---------------------------------------------------------------------------
# random families


def random_kernel(rng: np.random.Generator, k: int, concentration: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(k, concentration), size=k)


def random_fk(rng: np.random.Generator, k: int, n_steps: int, g_range=(0.2, 1.0),
              concentration: float = 1.0) -> FiniteFK:
    """Random model with Dirichlet kernel rows and uniform potentials in ``g_range``."""
    lo, hi = g_range
    return FiniteFK(
        init=rng.dirichlet(np.ones(k)),
        potentials=tuple(rng.uniform(lo, hi, size=k) for _ in range(n_steps)),
        kernels=tuple(random_kernel(rng, k, concentration) for _ in range(n_steps)),
    )


def smoothing_kernel(rng: np.random.Generator, k: int, strength: float) -> np.ndarray:
    """``(1 - strength) I + strength R`` with ``R`` a random stochastic matrix."""
    return (1.0 - strength) * np.eye(k) + strength * random_kernel(rng, k)


def random_block_chain(rng: np.random.Generator, k: int = 4, window: int = 8, n_blocks: int = 5,
                       strength: float = 0.2) -> tuple[BlockChain, np.ndarray]:
    """Random block chain started at its periodic point, plus a test function."""
    block = random_fk(rng, k, window)
    block = FiniteFK(init=periodic_point(block), potentials=block.potentials, kernels=block.kernels)
    chain = BlockChain(block=block, perturb=smoothing_kernel(rng, k, strength), n_blocks=n_blocks)
    return chain, rng.random(k)


# ---------------------------------------------------------------------------
# exact posteriors for the finite hidden Markov model


def hmm_forward(model, theta, ys, init=None):
    """Forward recursion for :class:`~smcfw.models.FiniteHMM` at a batch of rates.

    ``theta`` has shape ``(G,)``.  Returns ``(loglik (G,), filtered (G, K))``
    where ``filtered`` is the law of the state at the last observation.  The
    chain starts at ``init`` (default: the model's initial law) at time 0,
    and the first observation sits one transition later.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    K = model.n_states
    m = np.exp(-theta)[:, None]
    alpha = np.broadcast_to(model.initial_distribution() if init is None else init, (theta.size, K)).astype(float)
    emis = model.emission_loglik(ys)
    loglik = np.zeros(theta.size)
    for row in emis:
        # transition (1 - m) I + m / K applied to alpha
        alpha = (1.0 - m) * alpha + m * alpha.sum(axis=1, keepdims=True) / K
        top = row.max()
        alpha = alpha * np.exp(row - top)[None, :]
        mass = alpha.sum(axis=1)
        loglik += np.log(mass) + top
        alpha = alpha / mass[:, None]
    return loglik, alpha


def hmm_window_loglik(model, theta, ys, start) -> np.ndarray:
    """Log-likelihood of ``ys`` when the state at ``ys[0]`` has law ``start(theta)`` (shape (G, K)).

    Unlike :func:`hmm_forward` no transition precedes the first observation.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    K = model.n_states
    m = np.exp(-theta)[:, None]
    alpha = np.asarray(start, dtype=float)
    emis = model.emission_loglik(ys)
    loglik = np.zeros(theta.size)
    for i, row in enumerate(emis):
        if i > 0:
            alpha = (1.0 - m) * alpha + m * alpha.sum(axis=1, keepdims=True) / K
        top = row.max()
        alpha = alpha * np.exp(row - top)[None, :]
        mass = alpha.sum(axis=1)
        loglik += np.log(mass) + top
        alpha = alpha / mass[:, None]
    return loglik


@dataclass(frozen=True)
class GridPosterior:
    """Density on an evenly spaced grid of the log-parameter ``u``."""

    u: np.ndarray
    logdensity: np.ndarray

    @property
    def step(self) -> float:
        return float(self.u[1] - self.u[0])

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.logdensity - self.logdensity.max())
        return w / w.sum()

    def mean(self, fn=np.exp) -> float:
        return float(self.weights @ fn(self.u))


def default_grid(lo: float = -9.0, hi: float = 4.0, size: int = 20001) -> np.ndarray:
    return np.linspace(lo, hi, size)


def hmm_posterior(model, ys, grid=None) -> GridPosterior:
    """Posterior of ``u = log(rate)`` given ``ys``, prior Jacobian included."""
    u = default_grid() if grid is None else np.asarray(grid, dtype=float)
    loglik, _ = hmm_forward(model, np.exp(u), ys)
    return GridPosterior(u, model.prior_logdensity_unconstrained(u[:, None]) + loglik)


def hmm_posterior_mean(model, ys, grid=None) -> float:
    """``E[rate | ys]`` for the finite model."""
    return hmm_posterior(model, ys, grid).mean()


def gaussian_smooth(post: GridPosterior, h: float) -> np.ndarray:
    """``log`` of the grid density convolved with ``N(0, h^2)`` (a density in ``u``).

    The grid must be evenly spaced; the kernel is truncated at 10 ``h``.
    """
    du = post.step
    half = max(1, int(math.ceil(10.0 * h / du)))
    offsets = du * np.arange(-half, half + 1)
    kernel = np.exp(-0.5 * (offsets / h) ** 2) / (h * math.sqrt(2 * math.pi))
    dens = fftconvolve(post.weights, kernel, mode="same")
    with np.errstate(divide="ignore"):
        return np.log(np.maximum(dens, 0.0))


def windowed_limit_posterior(model, ys, window: int, h: float, power: float = 1.0,
                             grid=None) -> GridPosterior:
    """Large-``N`` limit of the two-block windowed target at time ``2T``.

    The bridge density becomes the block-1 posterior of ``u`` smoothed by
    ``N(0, h^2)``, and the new block's states are pushed one step from the
    block-1 filtered law of the terminal state (mixed over the parameter).
    The returned density is ``c(u)^power`` times the likelihood of the
    second block under that start.
    """
    ys = np.asarray(ys, dtype=float)
    if len(ys) != 2 * window:
        raise ValueError("expects exactly two blocks of observations")
    u = default_grid() if grid is None else np.asarray(grid, dtype=float)
    first = hmm_posterior(model, ys[:window], u)
    _, filtered = hmm_forward(model, np.exp(u), ys[:window])
    x_bar = first.weights @ filtered
    log_c = gaussian_smooth(first, h)
    K = model.n_states
    m = np.exp(-np.exp(u))[:, None]
    start = (1.0 - m) * x_bar[None, :] + m / K
    loglik = hmm_window_loglik(model, np.exp(u), ys[window:], start)
    return GridPosterior(u, power * log_c + loglik)


# ---------------------------------------------------------------------------
# exact bridge density


def exact_zeta(prior_weights, init, kernels, emission_logliks) -> np.ndarray:
    """Joint law of ``(theta, x_{n+1})`` given ``n`` observations on a parameter grid.

    ``prior_weights`` has shape ``(G,)``, ``init`` shape ``(G, K)`` (the law of
    ``x_0`` per grid value), ``kernels`` shape ``(G, K, K)`` and
    ``emission_logliks`` shape ``(n, K)`` (observation ``k`` sits on ``x_k``).
    Returns a ``(G, K)`` table summing to one.
    """
    prior = np.asarray(prior_weights, dtype=float)
    alpha = np.asarray(init, dtype=float) * prior[:, None]
    P = np.asarray(kernels, dtype=float)
    log_scale = np.zeros(prior.size)
    for row in np.asarray(emission_logliks, dtype=float).reshape(-1, alpha.shape[1]):
        alpha = np.einsum("gi,gij->gj", alpha, P)
        top = row.max()
        alpha = alpha * np.exp(row - top)[None, :]
        s = alpha.sum(axis=1, keepdims=True)
        s = np.where(s > 0, s, 1.0)
        log_scale += np.log(s[:, 0]) + top
        alpha = alpha / s
    alpha = np.einsum("gi,gij->gj", alpha, P)
    logw = np.log(np.maximum(alpha, 1e-300)) + log_scale[:, None]
    logw = np.where(alpha > 0, logw, -np.inf)
    out = np.exp(logw - logw.max())
    return out / out.sum()


class ExactZetaBridge:
    """Bridge with the exact ``zeta`` of a :class:`~smcfw.models.FiniteHMM`.

    The parameter marginal is a histogram on cells of the log-rate grid
    (piecewise-constant density) and, given the parameter, the new block's
    states are drawn i.i.d. from the exact conditional law of ``zeta``.
    It plugs into the windowed sampler wherever a kernel bridge is used.
    """

    def __init__(self, model, ys, edges):
        self.model = model
        self.edges = np.asarray(edges, dtype=float)
        mids = 0.5 * (self.edges[1:] + self.edges[:-1])
        widths = np.diff(self.edges)
        rates = np.exp(mids)
        K = model.n_states
        # prior mass of each cell on the u scale, midpoint rule
        prior = np.exp(model.prior_logdensity_unconstrained(mids[:, None])) * widths
        init = np.broadcast_to(model.initial_distribution(), (mids.size, K))
        kernels = np.stack([model.transition_matrix(r) for r in rates])
        table = exact_zeta(prior, init, kernels, model.emission_loglik(ys))
        self.table = table
        self.mass = table.sum(axis=1)
        self.conditional = table / np.where(self.mass > 0, self.mass, 1.0)[:, None]
        self.widths = widths
        with np.errstate(divide="ignore"):
            self.log_density = np.log(self.mass) - np.log(widths)
        self._cdf = np.cumsum(self.mass)
        self._cdf /= self._cdf[-1]

    size = property(lambda self: self.mass.size)
    dim = 1

    def _cell(self, u) -> np.ndarray:
        return np.searchsorted(self.edges, u, side="right") - 1

    def sample_theta(self, rng, size: int):
        j = np.minimum(np.searchsorted(self._cdf, rng.random(size), side="right"), self.size - 1)
        u = self.edges[j] + self.widths[j] * rng.random(size)
        return u[:, None], j

    def marginal_logdensity(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))[:, 0]
        cell = self._cell(u)
        inside = (cell >= 0) & (cell < self.size)
        return np.where(inside, self.log_density[np.clip(cell, 0, self.size - 1)], -np.inf)

    def sample_state(self, model, theta, n_x: int, rng) -> np.ndarray:
        u = np.log(np.atleast_2d(theta)[:, 0])
        cell = np.clip(self._cell(u), 0, self.size - 1)
        cdf = np.cumsum(self.conditional[cell], axis=1)
        draws = rng.random((cell.size, n_x, 1))
        return np.minimum((cdf[:, None, :] <= draws).sum(axis=-1), model.n_states - 1)

    def posterior(self, ys_window, grid_per_cell: int = 8) -> GridPosterior:
        """Exact target of a block started from this bridge, on a sub-grid of the cells."""
        frac = (np.arange(grid_per_cell) + 0.5) / grid_per_cell
        u = (self.edges[:-1, None] + self.widths[:, None] * frac[None, :]).ravel()
        cell = np.repeat(np.arange(self.size), grid_per_cell)
        start = self.conditional[cell]
        loglik = hmm_window_loglik(self.model, np.exp(u), ys_window, start)
        with np.errstate(divide="ignore"):
            return GridPosterior(u, self.log_density[cell] + loglik)
