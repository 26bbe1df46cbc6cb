"""Euclidean fundamental solutions of (Delta + alpha)^k in R^n, n > 2k.

The kernel for alpha = 1 has the closed radial form

    G^(k)(r) = D_{n,k} r^{-nu} K_nu(r),      nu = (n - 2k)/2,
    D_{n,k}  = 1 / (2^{(n+2k-2)/2} pi^{n/2} (k-1)!),

and general alpha follows from the scaling G_alpha(r) =
alpha^{(n-2k)/2} G^(k)(sqrt(alpha) r).  The closed form is validated in the
test suite against three independent oracles: the k = 1 Bessel kernel, the
small-r normalisation r^{n-2k} G -> c_{n,k}, and numerical radial
self-convolution.

Radial derivatives are exact: d/dr maps a term c r^p K_m(s r) to
(p + m) c r^{p-1} K_m(s r) - c s r^p K_{m+1}(s r), so the profile and all
its derivatives stay finite linear combinations of such terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .besselk import UNDERFLOW_ARG, bessel_k_array, bessel_k_scaled_array, gamma_fn
from .errors import DomainError, OutOfRegimeError, UnsupportedOrderError
from .params import ProblemParams


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere S^{n-1} in R^n."""
    if n < 1:
        raise DomainError(f"need n >= 1, got {n}")
    return 2.0 * math.pi ** (n / 2.0) / gamma_fn(n / 2.0)


def c_nk(n: int, k: int) -> float:
    """Normalisation constant of the pure poly-Laplacian kernel c_{n,k} r^{2k-n}."""
    if n <= 2 * k:
        raise DomainError(f"need n > 2k, got n={n}, k={k}")
    if k < 1:
        raise DomainError(f"need k >= 1, got k={k}")
    return gamma_fn((n - 2 * k) / 2.0) / (4.0**k * math.pi ** (n / 2.0) * math.factorial(k - 1))


def closed_form_constant(n: int, k: int) -> float:
    """Prefactor D_{n,k} of the closed-form kernel D_{n,k} r^{-nu} K_nu(r)."""
    if n <= 2 * k:
        raise DomainError(f"need n > 2k, got n={n}, k={k}")
    return 1.0 / (2.0 ** ((n + 2 * k - 2) / 2.0) * math.pi ** (n / 2.0) * math.factorial(k - 1))


def eta(t: float, n: int, k: int) -> float:
    """Near-diagonal remainder scale: t, t^2 (1+|log t|), or t^2 by n - 2k.

    Defined only on 0 < t <= 1; arguments outside are rejected rather than
    extrapolated.
    """
    if not 0.0 < t <= 1.0:
        raise DomainError(f"eta is defined on (0, 1], got t={t}")
    if n <= 2 * k:
        raise DomainError(f"need n > 2k, got n={n}, k={k}")
    gap = n - 2 * k
    if gap == 1:
        return t
    if gap == 2:
        return t * t * (1.0 + abs(math.log(t)))
    return t * t


def kernel_k1(n: int, r: float) -> float:
    """Fundamental solution of (Delta + 1) in R^n: (2 pi)^{-n/2} r^{-(n-2)/2} K_{(n-2)/2}(r)."""
    if n < 3:
        raise DomainError(f"need n >= 3, got n={n}")
    if r <= 0:
        raise DomainError(f"need r > 0, got r={r}")
    return kernel_closed_form(n, 1, r)


def kernel_closed_form_array(n: int, k: int, x: np.ndarray) -> np.ndarray:
    """Closed-form alpha = 1 kernel on an array of radii."""
    if n <= 2 * k:
        raise DomainError(f"need n > 2k, got n={n}, k={k}")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("kernel radius must be positive")
    twice_nu = n - 2 * k
    d = closed_form_constant(n, k)
    out = np.zeros_like(x)
    ok = x <= UNDERFLOW_ARG
    if np.any(ok):
        xs = x[ok]
        out[ok] = d * xs ** (-0.5 * twice_nu) * (
            bessel_k_scaled_array(twice_nu, xs) * np.exp(-xs)
        )
    return out


def kernel_closed_form(n: int, k: int, r: float) -> float:
    return float(kernel_closed_form_array(n, k, np.array([float(r)]))[0])


def kernel_alpha_array(params: ProblemParams, r: np.ndarray) -> np.ndarray:
    """G_alpha^(k) on an array of radii, by scaling the alpha = 1 closed form.

    Radii with sqrt(alpha) r > 700 return exact 0.0 (underflow policy)."""
    r = np.asarray(r, dtype=float)
    s = params.sqrt_alpha
    return params.alpha ** (0.5 * params.twice_nu) * kernel_closed_form_array(
        params.n, params.k, s * r
    )


def kernel_alpha(params: ProblemParams, r: float) -> float:
    return float(kernel_alpha_array(params, np.array([float(r)]))[0])


# ---------------------------------------------------------------------------
# Exact radial derivatives via the term algebra c * r^p * K_m(s r)
# ---------------------------------------------------------------------------

def profile_terms(params: ProblemParams) -> list[tuple[float, float, int]]:
    """The kernel profile as [(coef, rpow, twice_order)] with argument scale sqrt(alpha)."""
    nu = 0.5 * params.twice_nu
    coef = closed_form_constant(params.n, params.k) * params.alpha ** (0.5 * nu)
    return [(coef, -nu, params.twice_nu)]


def differentiate_terms(
    terms: list[tuple[float, float, int]], s: float
) -> list[tuple[float, float, int]]:
    """One d/dr applied to a sum of c r^p K_m(s r) terms."""
    out: dict[tuple[float, int], float] = {}
    for coef, p, twice_m in terms:
        a = coef * (p + 0.5 * twice_m)
        if a != 0.0:
            key = (p - 1.0, twice_m)
            out[key] = out.get(key, 0.0) + a
        key = (p, twice_m + 2)
        out[key] = out.get(key, 0.0) - coef * s
    return [(c, p, m) for (p, m), c in out.items() if c != 0.0]


def evaluate_terms_array(
    terms: list[tuple[float, float, int]], s: float, r: np.ndarray
) -> np.ndarray:
    """Evaluate a term sum at radii r, sharing one exponential factor."""
    r = np.asarray(r, dtype=float)
    x = s * r
    out = np.zeros_like(r)
    ok = x <= UNDERFLOW_ARG
    if not np.any(ok):
        return out
    xs = x[ok]
    rs = r[ok]
    acc = np.zeros_like(rs)
    for coef, p, twice_m in terms:
        acc += coef * rs**p * bessel_k_scaled_array(twice_m, xs)
    out[ok] = acc * np.exp(-xs)
    return out


def kernel_radial_derivative(params: ProblemParams, r: float, l: int) -> float:
    """l-th radial derivative of the kernel profile, exact up to rounding.

    ``l = 0`` is the kernel itself; orders above 2k are not supported (the
    Bessel order would leave the table driven by the operator order).
    """
    if l < 0:
        raise DomainError(f"derivative order must be >= 0, got {l}")
    if l > 2 * params.k:
        raise UnsupportedOrderError(
            f"derivative order {l} exceeds operator order 2k = {2 * params.k}"
        )
    if r <= 0:
        raise DomainError(f"need r > 0, got r={r}")
    terms = profile_terms(params)
    s = params.sqrt_alpha
    for _ in range(l):
        terms = differentiate_terms(terms, s)
    return float(evaluate_terms_array(terms, s, np.array([float(r)]))[0])


def kernel_gradient_terms(params: ProblemParams, l: int) -> list[tuple[float, float, int]]:
    """Term list of the l-th derivative, for vectorised evaluation elsewhere."""
    terms = profile_terms(params)
    for _ in range(l):
        terms = differentiate_terms(terms, params.sqrt_alpha)
    return terms


# ---------------------------------------------------------------------------
# Two-regime envelope and near-diagonal remainder diagnostics
# ---------------------------------------------------------------------------

def envelope_bound(params: ProblemParams, r: float) -> float:
    """Constant-free two-regime bound shape for the kernel.

    r^{2k-n} when sqrt(alpha) r <= 1, else
    alpha^{k(n-3)/4} r^{((k-2)n+k)/2} e^{-sqrt(alpha) r}.
    """
    if r <= 0:
        raise DomainError(f"need r > 0, got r={r}")
    n, k, a = params.n, params.k, params.alpha
    t = params.sqrt_alpha * r
    if t <= 1.0:
        return r ** (2 * k - n)
    return a ** (k * (n - 3) / 4.0) * r ** (((k - 2) * n + k) / 2.0) * math.exp(-t) if t <= UNDERFLOW_ARG else 0.0


def far_field_exponents(n: int, k: int) -> tuple[float, float]:
    """(alpha power, r power) of the far regime: (k(n-3)/4, ((k-2)n+k)/2)."""
    return k * (n - 3) / 4.0, ((k - 2) * n + k) / 2.0


def remainder_ratio(params: ProblemParams, r: float) -> float:
    """|G / (c_{n,k} r^{2k-n}) - 1| / eta(sqrt(alpha) r), near regime only."""
    t = params.sqrt_alpha * r
    if not 0.0 < t <= 1.0:
        raise OutOfRegimeError(
            f"remainder ratio defined for 0 < sqrt(alpha) r <= 1, got {t}"
        )
    n, k = params.n, params.k
    reduced = kernel_closed_form(n, k, t) * t ** (n - 2 * k) / c_nk(n, k)
    return abs(reduced - 1.0) / eta(t, n, k)


def differentiated_remainder_ratio(params: ProblemParams, r: float, l: int) -> float:
    """|d^l/dr^l ( r^{n-2k} G )| r^l / eta(sqrt(alpha) r), near regime only.

    Bounded uniformly in alpha for 1 <= l <= 2k - 1; the test suite fits the
    constant.
    """
    if not 1 <= l <= 2 * params.k - 1:
        raise DomainError(f"need 1 <= l <= 2k-1 = {2 * params.k - 1}, got {l}")
    t = params.sqrt_alpha * r
    if not 0.0 < t <= 1.0:
        raise OutOfRegimeError(
            f"differentiated remainder defined for 0 < sqrt(alpha) r <= 1, got {t}"
        )
    gap = params.n - 2 * params.k
    terms = [(c, p + gap, m) for c, p, m in profile_terms(params)]
    s = params.sqrt_alpha
    for _ in range(l):
        terms = differentiate_terms(terms, s)
    val = float(evaluate_terms_array(terms, s, np.array([float(r)]))[0])
    return abs(val) * r**l / eta(t, params.n, params.k)


# ---------------------------------------------------------------------------
# Radial kernel objects consumed by the convolution engine
# ---------------------------------------------------------------------------

@dataclass
class RadialKernel:
    """An evaluable radial profile with singularity and decay metadata.

    ``evaluator`` must accept a positive float array and is assumed finite on
    r > 0; ``sing_exp`` is the exponent s with kernel ~ C r^s as r -> 0+;
    ``support_radius`` is None for unbounded support; ``semigroup_order``
    marks Green-kernel factors so the convolution engine can enforce the
    well-definedness condition n > 2(k_f + k_g).
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    sing_exp: float
    n: int
    support_radius: Optional[float] = None
    decay_rate: float = 0.0          # kernel ~ r^rho e^{-decay_rate * r} far out
    semigroup_order: Optional[int] = None
    envelope: Optional[object] = None

    def __call__(self, r):
        scalar = np.isscalar(r)
        vals = self.evaluator(np.atleast_1d(np.asarray(r, dtype=float)))
        return float(vals[0]) if scalar else vals


def green_radial_kernel(params: ProblemParams, envelope: Optional[object] = None) -> RadialKernel:
    """RadialKernel wrapper of G_alpha^(k), tagged with its semigroup order."""
    return RadialKernel(
        evaluator=lambda r: kernel_alpha_array(params, r),
        sing_exp=float(2 * params.k - params.n),
        n=params.n,
        support_radius=None,
        decay_rate=params.sqrt_alpha,
        semigroup_order=params.k,
        envelope=envelope,
    )
