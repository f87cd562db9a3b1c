"""Randomised checks of the contraction and block-bias properties on finite models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..fk_oracle import (
    block_biases,
    contraction_check,
    minorization_constants,
    random_block_chain,
    random_fk,
)

BIAS_RATIO = 1.25
BIAS_PASS_FRACTION = 0.9


@dataclass
class TheoryReport:
    contraction_trials: int = 0
    bias_trials: int = 0
    contraction_violations: list = field(default_factory=list)
    bias_violations: list = field(default_factory=list)

    @property
    def bias_pass_fraction(self) -> float:
        if self.bias_trials == 0:
            return 1.0
        return 1.0 - len(self.bias_violations) / self.bias_trials

    @property
    def passed(self) -> bool:
        return not self.contraction_violations and self.bias_pass_fraction >= BIAS_PASS_FRACTION

    def lines(self) -> list[str]:
        out = [
            f"contraction: {self.contraction_trials - len(self.contraction_violations)}/"
            f"{self.contraction_trials} within bound",
            f"block bias: {self.bias_trials - len(self.bias_violations)}/{self.bias_trials} "
            f"with max_b B(bT) <= {BIAS_RATIO} B(2T)",
        ]
        out += [f"  contraction violated: {v}" for v in self.contraction_violations]
        out += [f"  bias ratio exceeded: {v}" for v in self.bias_violations]
        out.append("PASS" if self.passed else "FAIL")
        return out


def random_contraction_case(rng: np.random.Generator, k: int = 3, max_steps: int = 10):
    """A random model with positive minorization constant and a random ``(s, t, mu, rho)``."""
    while True:
        T = int(rng.integers(1, max_steps + 1))
        fk = random_fk(rng, k, T, g_range=(float(rng.uniform(0.05, 0.9)), 1.0))
        constants = minorization_constants(fk)
        if np.all(constants.epsilon > 0):
            break
    s = int(rng.integers(0, T + 1))
    t = int(rng.integers(s, T + 1))
    mu = rng.dirichlet(np.ones(k))
    rho = rng.dirichlet(np.ones(k))
    return fk, s, t, mu, rho, constants


def verify_theory(contraction_trials: int = 100, bias_trials: int = 50, seed: int = 0,
                  bound_factor: float = 2.0, window: int = 8, n_blocks: int = 5) -> TheoryReport:
    """Run both suites; ``bound_factor`` scales the contraction bound (2 is the real one)."""
    rng = np.random.default_rng(seed)
    report = TheoryReport(contraction_trials=contraction_trials, bias_trials=bias_trials)
    for i in range(contraction_trials):
        fk, s, t, mu, rho, constants = random_contraction_case(rng)
        res = contraction_check(fk, s, t, mu, rho, constants, factor=bound_factor)
        if not res.holds:
            report.contraction_violations.append(
                f"case {i}: s={s} t={t} lhs={res.lhs:.6g} bound={res.bound:.6g}")
    for i in range(bias_trials):
        chain, phi = random_block_chain(rng, window=window, n_blocks=n_blocks)
        B = block_biases(chain, phi)
        ratio = B[1:].max() / B[1] if B[1] > 0 else 1.0
        if ratio > BIAS_RATIO:
            report.bias_violations.append(f"model {i}: ratio {ratio:.4f}")
    return report
