"""Polynomial smoothstep cutoff used to localise the parametrix.

chi is identically 1 on [0, tau0/2], identically 0 on [tau0, inf), and on the
transition annulus equals 1 - S((r - tau0/2)/(tau0/2)) where S is the
polynomial smoothstep whose first ``smoothness`` derivatives vanish at both
junctions.  Being polynomial, all derivatives are exact, which the radial
operator pipeline relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DomainError


def smoothstep_polynomial(smoothness: int) -> Polynomial:
    """S_N on [0, 1] with S(0)=0, S(1)=1 and N vanishing derivatives at both ends.

    S_N(x) = x^{N+1} sum_{j=0}^{N} binom(N+j, j) binom(2N+1, N-j) (-x)^j.
    """
    if smoothness < 1:
        raise DomainError(f"need smoothness >= 1, got {smoothness}")
    n = smoothness
    coeffs = [0.0] * (n + 1)
    for j in range(n + 1):
        coeffs.append(
            float(math.comb(n + j, j) * math.comb(2 * n + 1, n - j) * (-1) ** j)
        )
    return Polynomial(coeffs)


@dataclass
class CutoffSpec:
    """Radial cutoff: 1 on [0, tau0/2], polynomial drop to 0 at tau0.

    ``smoothness`` derivatives vanish at both junctions; the transition
    polynomial (in the scaled variable u = (r - tau0/2)/(tau0/2)) is exposed
    for the symbolic radial pipeline.
    """

    tau0: float
    smoothness: int
    step: Polynomial = field(init=False, repr=False)
    _derivs: list = field(init=False, repr=False)

    def __post_init__(self):
        if self.tau0 <= 0:
            raise DomainError(f"need tau0 > 0, got {self.tau0}")
        self.step = smoothstep_polynomial(self.smoothness)
        self._derivs = [self.step]
        for _ in range(self.step.degree()):
            self._derivs.append(self._derivs[-1].deriv())

    @property
    def half(self) -> float:
        return 0.5 * self.tau0

    def scaled(self, r: np.ndarray) -> np.ndarray:
        return (np.asarray(r, dtype=float) - self.half) / self.half

    def chi(self, r):
        """chi(r), elementwise."""
        r = np.asarray(r, dtype=float)
        u = np.clip(self.scaled(r), 0.0, 1.0)
        out = 1.0 - self.step(u)
        return out if out.shape else float(out)

    def chi_derivative(self, r, order: int):
        """Exact d^order/dr^order chi(r), elementwise (0 outside the annulus)."""
        if order == 0:
            return self.chi(r)
        r = np.asarray(r, dtype=float)
        u = self.scaled(r)
        inside = (u > 0.0) & (u < 1.0)
        out = np.zeros_like(r)
        if order <= self.step.degree():
            poly = self._derivs[order]
            out[inside] = -poly(u[inside]) / self.half**order
        return out if out.shape else float(out)

    def transition_polynomial(self, order: int) -> Polynomial:
        """-d^order S/du^order as a polynomial in u (chain-rule factors excluded)."""
        if order > self.step.degree():
            return Polynomial([0.0])
        return -self._derivs[order]


def auto_tau0(n: int, L: float) -> float:
    """Default localisation radius 0.9 * (L/2) / (n + 2), inside i_g/(n+2)."""
    return 0.9 * (L / 2.0) / (n + 2)


def cutoff_for(params_n: int, k: int, L: float, tau0: float | None = None) -> CutoffSpec:
    """Standard cutoff for the parametrix: smoothness 2k + 2, tau0 auto by default."""
    t0 = auto_tau0(params_n, L) if tau0 is None else tau0
    return CutoffSpec(tau0=t0, smoothness=2 * k + 2)
