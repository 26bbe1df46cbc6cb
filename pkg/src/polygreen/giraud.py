"""Two-regime decay envelopes and their exact behaviour under convolution.

An envelope bounds a kernel X by

    |X| <= d^{beta - n}                                  sqrt(alpha) d <= 1
    |X| <= alpha^p d^rho e^{-rate sqrt(alpha) d}         sqrt(alpha) d >= 1
    X = 0                                                d >= support

with beta in (0, n], rho > -n, p >= 0.  Convolving two such kernels yields
another envelope of the same family; the near regime follows the trichotomy
in beta + gamma vs n (power / log / alpha-power) and the far regime has
alpha-power n - (beta+gamma)/2 + (rho+nu)/2 and r-power rho + nu + n.  All
exponent arithmetic is exact rational arithmetic so the regime
classification never suffers floating ties.

The compatibility predicate 2p - rho <= n - beta expresses that the two
regimes of an envelope meet (up to order of magnitude) at d ~ 1/sqrt(alpha);
the composition rules are valid only under it.

The module also houses the numerical radial-convolution engine used to
check composed envelopes against actual kernels, and the Psi comparison
envelope (bounded near, rate-(1-eps) exponential middle, saturated beyond
half the injectivity radius).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ConvergenceError,
    DomainError,
    EstimateNotApplicableError,
)
from .euclid import RadialKernel, sphere_area
from .params import ProblemParams

FractionLike = Fraction | int | str


def _frac(x: FractionLike) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


@dataclass(frozen=True)
class NearRegime:
    """Near-diagonal regime of an envelope.

    kind "power" bounds by d^{beta-n}; "log" by 1 + |log(sqrt(alpha) d)|;
    "const" by 1; "const_alpha" by alpha^{alpha_exp}.
    """

    kind: str
    beta: Optional[Fraction] = None
    alpha_exp: Optional[Fraction] = None

    def __post_init__(self):
        if self.kind not in ("power", "log", "const", "const_alpha"):
            raise DomainError(f"unknown near-regime kind {self.kind!r}")
        if self.kind == "power" and self.beta is None:
            raise DomainError("power near regime requires beta")
        if self.kind == "const_alpha" and self.alpha_exp is None:
            raise DomainError("const_alpha near regime requires alpha_exp")


@dataclass(frozen=True)
class EnvelopeSpec:
    """Two-regime bound: near regime, far (p, rho, rate), support radius."""

    near: NearRegime
    p: Fraction
    rho: Fraction
    rate: Fraction = Fraction(1)
    support: Optional[Fraction] = None

    @property
    def beta(self) -> Optional[Fraction]:
        return self.near.beta

    def to_json_dict(self) -> dict:
        if self.near.kind == "power":
            near = str(self.near.beta)
        elif self.near.kind == "const_alpha":
            near = {"const_alpha": str(self.near.alpha_exp)}
        else:
            near = self.near.kind
        return {
            "beta": near,
            "p": str(self.p),
            "rho": str(self.rho),
            "rate": str(self.rate),
            "support": None if self.support is None else str(self.support),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "EnvelopeSpec":
        raw = d["beta"]
        if isinstance(raw, dict):
            near = NearRegime("const_alpha", alpha_exp=Fraction(raw["const_alpha"]))
        elif raw in ("log", "const"):
            near = NearRegime(raw)
        else:
            near = NearRegime("power", beta=Fraction(raw))
        sup = d.get("support")
        return EnvelopeSpec(
            near=near,
            p=Fraction(d["p"]),
            rho=Fraction(d["rho"]),
            rate=Fraction(d.get("rate", 1)),
            support=None if sup is None else Fraction(sup),
        )


def power_envelope(
    beta: FractionLike,
    p: FractionLike,
    rho: FractionLike,
    support: Optional[FractionLike] = None,
    rate: FractionLike = 1,
) -> EnvelopeSpec:
    """Envelope with a plain power near regime d^{beta-n}."""
    beta = _frac(beta)
    if beta <= 0:
        raise DomainError(f"need beta > 0, got {beta}")
    return EnvelopeSpec(
        near=NearRegime("power", beta=beta),
        p=_frac(p),
        rho=_frac(rho),
        rate=_frac(rate),
        support=None if support is None else _frac(support),
    )


def kernel_far_envelope(n: int, k: int) -> EnvelopeSpec:
    """Two-regime envelope of the Euclidean kernel of (Delta+alpha)^k."""
    return power_envelope(
        beta=2 * k,
        p=Fraction(k * (n - 3), 4),
        rho=Fraction((k - 2) * n + k, 2),
    )


def error_field_envelope(n: int, k: int, tau0: FractionLike) -> EnvelopeSpec:
    """Envelope of the parametrix error field: beta = 2, far alpha^{k(n+1)/4} d^{((k-2)n+k+4)/2}."""
    return power_envelope(
        beta=2,
        p=Fraction(k * (n + 1), 4),
        rho=Fraction((k - 2) * n + k + 4, 2),
        support=tau0,
    )


def _validate_power_input(spec: EnvelopeSpec, n: int, name: str) -> None:
    if spec.near.kind != "power":
        raise EstimateNotApplicableError(
            f"{name}: composition requires a power near regime, got {spec.near.kind}",
            failed_inequality="near regime is a power",
        )
    if not 0 < spec.near.beta <= n:
        raise DomainError(f"{name}: need beta in (0, n], got beta={spec.near.beta}, n={n}")
    if spec.rho <= -n:
        raise DomainError(f"{name}: need rho > -n, got rho={spec.rho}, n={n}")
    if spec.p < 0:
        raise DomainError(f"{name}: need p >= 0, got {spec.p}")


def compatibility_check(spec: EnvelopeSpec, n: int) -> tuple[bool, dict]:
    """Predicate 2p - rho <= n - beta, with the slack reported.

    Zero slack means the two regimes are of the same order at d ~ 1/sqrt(alpha).
    Bounded near regimes count as beta = n.
    """
    beta = spec.near.beta if spec.near.kind == "power" else Fraction(n)
    slack = (n - beta) - (2 * spec.p - spec.rho)
    return slack >= 0, {
        "inequality": "2p - rho <= n - beta",
        "lhs": 2 * spec.p - spec.rho,
        "rhs": n - beta,
        "slack": slack,
    }


def _near_trichotomy(total: Fraction, n: int, alpha_scaled: bool) -> NearRegime:
    if total < n:
        return NearRegime("power", beta=total)
    if total == n:
        return NearRegime("log")
    if alpha_scaled:
        return NearRegime("const_alpha", alpha_exp=-Fraction(total - n, 2))
    return NearRegime("const")


def compose_euclid(x: EnvelopeSpec, y: EnvelopeSpec, n: int) -> EnvelopeSpec:
    """Envelope of the convolution on R^n in the unscaled (alpha = 1) case.

    Near: r^{beta+gamma-n} / log / const by the trichotomy; far:
    r^{rho+nu+n} e^{-r}.
    """
    _validate_power_input(x, n, "X")
    _validate_power_input(y, n, "Y")
    support = None
    if x.support is not None and y.support is not None:
        support = x.support + y.support
    return EnvelopeSpec(
        near=_near_trichotomy(x.near.beta + y.near.beta, n, alpha_scaled=False),
        p=Fraction(0),
        rho=x.rho + y.rho + n,
        rate=Fraction(1),
        support=support,
    )


def compose_alpha(
    x: EnvelopeSpec,
    y: EnvelopeSpec,
    n: int,
    injectivity_radius: Optional[float] = None,
) -> EnvelopeSpec:
    """Envelope of the convolution in the alpha-scaled two-regime calculus.

    Requires the compatibility predicate on both inputs; the far regime
    gains alpha^{n - (beta+gamma)/2 + (rho+nu)/2} and r^{rho+nu+n}, and
    support radii add.
    """
    _validate_power_input(x, n, "X")
    _validate_power_input(y, n, "Y")
    for name, spec in (("X", x), ("Y", y)):
        ok, report = compatibility_check(spec, n)
        if not ok:
            raise EstimateNotApplicableError(
                f"{name}: compatibility failed: 2p - rho = {report['lhs']} > "
                f"n - beta = {report['rhs']} (slack {report['slack']})",
                failed_inequality=report["inequality"],
            )
    if x.rate != 1 or y.rate != 1:
        raise EstimateNotApplicableError(
            "alpha-scaled composition requires full-rate inputs (rate = 1)",
            failed_inequality="rate == 1",
        )
    support = None
    if x.support is not None and y.support is not None:
        support = x.support + y.support
        if injectivity_radius is not None and not support < injectivity_radius:
            raise EstimateNotApplicableError(
                f"support sum {support} must stay below the injectivity radius "
                f"{injectivity_radius}",
                failed_inequality="tau + sigma < i_g",
            )
    bg = x.near.beta + y.near.beta
    return EnvelopeSpec(
        near=_near_trichotomy(bg, n, alpha_scaled=True),
        p=n - Fraction(bg, 2) + Fraction(x.rho + y.rho, 2),
        rho=x.rho + y.rho + n,
        rate=Fraction(1),
        support=support,
    )


def iterate_error_envelope(n: int, k: int, tau0: FractionLike, depth: int) -> list[EnvelopeSpec]:
    """Envelopes of the convolution iterates of the error field, depth >= 1."""
    first = error_field_envelope(n, k, tau0)
    out = [first]
    for _ in range(1, depth):
        out.append(compose_alpha(out[-1], first, n))
    return out


def printed_iterate_exponents(n: int, k: int, i: int) -> tuple[Fraction, Fraction]:
    """(alpha power, r power) of the i-th error iterate: (ki(n+1)/4, (k(n+1)+4)i/2 - n)."""
    return Fraction(k * i * (n + 1), 4), Fraction((k * (n + 1) + 4) * i, 2) - n


# ---------------------------------------------------------------------------
# Psi comparison envelope (bounded near, reduced-rate middle, saturated far)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsiEnvelope:
    """alpha^{alpha_exp} Psi_{eps,alpha}: the three-regime comparison shape."""

    eps: float
    alpha_exp: Fraction = Fraction(0)


def psi_value(eps: float, alpha: float, d: float, injectivity_radius: float) -> float:
    """Pointwise Psi_{eps,alpha}(d): three regimes, saturated at d >= i_g/2."""
    if not 0 < eps < 1:
        raise DomainError(f"need eps in (0,1), got {eps}")
    s = math.sqrt(alpha)
    half = injectivity_radius / 2.0
    if d >= half:
        return math.exp(-(1 - eps) * s * half)
    if s * d >= 1.0:
        return math.exp(-(1 - eps) * s * d)
    return math.exp(-(1 - eps))


def compose_psi(
    x: EnvelopeSpec,
    eps: float,
    n: int,
    geometry_scale: float,
    psi: Optional[PsiEnvelope] = None,
) -> PsiEnvelope:
    """Envelope of the convolution of a bounded-near kernel with Psi_{eps,alpha}.

    Requires X bounded near the diagonal and 2p - rho <= 0; the result is
    alpha^{-n/2} times the same Psi shape (carrying along any alpha-power
    already attached to X or to the incoming Psi).
    """
    if x.near.kind == "power" and x.near.beta != n:
        raise EstimateNotApplicableError(
            f"Psi composition needs a bounded near regime (beta = n), got beta={x.near.beta}",
            failed_inequality="beta == n",
        )
    if x.near.kind == "log":
        raise EstimateNotApplicableError(
            "Psi composition needs a bounded near regime, got log",
            failed_inequality="near regime bounded",
        )
    if 2 * x.p - x.rho > 0:
        raise EstimateNotApplicableError(
            f"Psi composition needs 2p - rho <= 0, got {2 * x.p - x.rho}",
            failed_inequality="2p - rho <= 0",
        )
    if geometry_scale <= 0:
        raise DomainError("geometry scale (injectivity radius) must be positive")
    attached = x.near.alpha_exp if x.near.kind == "const_alpha" else Fraction(0)
    base = psi.alpha_exp if psi is not None else Fraction(0)
    return PsiEnvelope(eps=eps, alpha_exp=attached + base - Fraction(n, 2))


# ---------------------------------------------------------------------------
# Numeric envelope evaluation
# ---------------------------------------------------------------------------

def envelope_value(spec: EnvelopeSpec, n: int, alpha: float, r: float) -> float:
    """Numeric value of the (constant-free) envelope bound at distance r."""
    if r <= 0:
        raise DomainError(f"need r > 0, got {r}")
    if spec.support is not None and r >= float(spec.support):
        return 0.0
    s = math.sqrt(alpha)
    t = s * r
    if t <= 1.0:
        kind = spec.near.kind
        if kind == "power":
            return r ** float(spec.near.beta - n)
        if kind == "log":
            return 1.0 + abs(math.log(t))
        if kind == "const":
            return 1.0
        return alpha ** float(spec.near.alpha_exp)
    arg = float(spec.rate) * t
    if arg > 700.0:
        return 0.0
    return alpha ** float(spec.p) * r ** float(spec.rho) * math.exp(-arg)


def fit_far_slope(
    r: np.ndarray, values: np.ndarray, sqrt_alpha: float, rate: float = 1.0
) -> tuple[float, float]:
    """Least-squares slope of log(v) + rate sqrt(alpha) r against log r.

    Returns (slope, intercept); points with nonpositive values are rejected.
    """
    r = np.asarray(r, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        raise DomainError("far-field fit requires positive samples")
    y = np.log(values) + rate * sqrt_alpha * r
    a = np.vstack([np.log(r), np.ones_like(r)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    return float(coef[0]), float(coef[1])


# ---------------------------------------------------------------------------
# Radial convolution engine
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(15)


def _adaptive_segments(
    func: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    breaks: Sequence[float],
    tol_abs: float,
    tol_rel: float,
    max_intervals: int = 4000,
) -> tuple[float, float]:
    """Adaptive Gauss-Legendre on [a, b] with forced breakpoints.

    Interval error is estimated by comparison with the two-half refinement;
    vectorised integrand.  Returns (value, error estimate).
    """

    def gl(lo: float, hi: float) -> float:
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        return half * float(np.dot(_GL_W, func(mid + half * _GL_X)))

    pts = sorted({a, b, *[p for p in breaks if a < p < b]})
    stack = [(pts[i], pts[i + 1], gl(pts[i], pts[i + 1]), 0) for i in range(len(pts) - 1)]
    total = sum(v for _, _, v, _ in stack)
    value = 0.0
    err = 0.0
    count = len(stack)
    while stack:
        lo, hi, coarse, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left = gl(lo, mid)
        right = gl(mid, hi)
        fine = left + right
        delta = abs(fine - coarse)
        local_tol = max(tol_abs, tol_rel * abs(total)) * (hi - lo) / (b - a)
        if delta <= local_tol or depth >= 52:
            value += fine
            err += delta
            continue
        count += 2
        if count > max_intervals:
            raise ConvergenceError(
                "adaptive quadrature exceeded its interval budget",
                best_estimate=value + fine + sum(v for _, _, v, _ in stack),
                error_estimate=delta,
            )
        stack.append((lo, mid, left, depth + 1))
        stack.append((mid, hi, right, depth + 1))
    return value, err


def radial_convolve(
    f: RadialKernel,
    g: RadialKernel,
    n: int,
    r: float,
    tol: float = 1e-6,
    tol_rel: float = 1e-5,
) -> tuple[float, float]:
    """(f * g)(r) for radial f, g on R^n by the bispherical reduction.

    Uses
        (f*g)(r) = omega_{n-2} / (2^{n-3} r^{n-2}) *
                   int_0^inf f(s) s int_{|r-s|}^{r+s} g(t) t
                       [(t^2-(r-s)^2)((r+s)^2-t^2)]^{(n-3)/2} dt ds

    with adaptive subdivision isolating the s = 0 and s = r shells.  Returns
    the value and an error estimate; raises ConvergenceError when the
    requested tolerance cannot be certified.
    """
    if n < 2:
        raise DomainError(f"radial convolution needs n >= 2, got n={n}")
    if r <= 0:
        raise DomainError(f"need r > 0, got {r}")
    for name, kern in (("f", f), ("g", g)):
        if kern.sing_exp <= -n:
            raise DomainError(
                f"{name} has non-integrable singularity: sing_exp={kern.sing_exp} <= -{n}"
            )
    if f.semigroup_order is not None and g.semigroup_order is not None:
        total_order = f.semigroup_order + g.semigroup_order
        if n <= 2 * total_order:
            raise DomainError(
                f"semigroup convolution undefined: needs n > 2k with "
                f"k = {total_order}, got n = {n}"
            )

    half_pow = 0.5 * (n - 3)
    g_support = g.support_radius if g.support_radius is not None else math.inf

    def inner(s: float) -> float:
        t_lo, t_hi = abs(r - s), r + s
        t_hi = min(t_hi, g_support)
        if t_hi <= t_lo:
            return 0.0

        def g_integrand(t: np.ndarray) -> np.ndarray:
            base = g.evaluator(t) * t
            if half_pow != 0.0:
                poly = (t * t - (r - s) ** 2) * ((r + s) ** 2 - t * t)
                base = base * np.clip(poly, 0.0, None) ** half_pow
            return base

        breaks = []
        if t_lo < 1e-4 * r:
            # geometric refinement toward the g singularity at t -> 0
            breaks.extend(t_lo + (t_hi - t_lo) * np.geomspace(1e-10, 0.1, 8))
        val, _ = _adaptive_segments(
            g_integrand, t_lo, t_hi, breaks, tol_abs=inner_abs, tol_rel=tol_rel * 0.1
        )
        return val

    # Outer truncation radius: f's support, the emptiness of the t-range
    # beyond r + supp(g), or exponential decay.
    s_max = math.inf
    if f.support_radius is not None:
        s_max = f.support_radius
    if g_support < math.inf:
        s_max = min(s_max, r + g_support)
    if s_max == math.inf:
        rates = [x for x in (f.decay_rate, g.decay_rate) if x and x > 0]
        if not rates:
            raise DomainError("unbounded kernels need a positive decay rate for truncation")
        s_max = r + 60.0 / min(rates)

    # Scale for absolute tolerances: bispherical prefactor.
    prefactor = sphere_area(n - 1) / (2.0 ** (n - 3) * r ** (n - 2))
    inner_abs = tol / max(prefactor * s_max, 1e-30) * 1e-2

    def outer_integrand(s: np.ndarray) -> np.ndarray:
        out = np.empty_like(s)
        for i, si in enumerate(s):
            out[i] = f.evaluator(np.array([si]))[0] * si * inner(si)
        return out

    breaks = [r]
    if r > 2e-3 * s_max:
        breaks.extend(np.geomspace(1e-6 * s_max, 0.5 * r, 6))
    if g.support_radius is not None:
        breaks.extend([abs(r - g.support_radius), r + g.support_radius])
    if f.support_radius is not None:
        breaks.append(f.support_radius)
    val, err = _adaptive_segments(
        outer_integrand,
        0.0,
        s_max,
        breaks,
        tol_abs=tol / max(prefactor, 1e-30) * 0.3,
        tol_rel=tol_rel * 0.3,
    )
    value = prefactor * val
    error = prefactor * err + tol * 0.1
    if error > max(tol, tol_rel * abs(value)) * 4.0:
        raise ConvergenceError(
            f"radial convolution error estimate {error:g} exceeds tolerance",
            best_estimate=value,
            error_estimate=error,
        )
    return value, error


# ---------------------------------------------------------------------------
# Bound certification
# ---------------------------------------------------------------------------

@dataclass
class CertificationReport:
    """Outcome of checking a composed envelope against numerical convolutions."""

    fitted: dict
    passed: bool
    drift: float
    counterexample: Optional[dict] = None


def certify_bound(
    x_family: Callable[[float], RadialKernel],
    y_family: Callable[[float], RadialKernel],
    composed: EnvelopeSpec,
    n: int,
    alpha_list: Sequence[float],
    r_grid: Sequence[float],
    drift_factor: float = 2.0,
    tol: float = 1e-8,
) -> CertificationReport:
    """Fit the minimal C with conv <= C * composed on the grid, per alpha.

    Fails (with a counterexample) if the convolution is nonzero where the
    composed envelope vanishes, or if the fitted constant drifts by more
    than ``drift_factor`` across ``alpha_list``.
    """
    fitted: dict = {}
    for alpha in alpha_list:
        fx = x_family(alpha)
        fy = y_family(alpha)
        worst = 0.0
        for r in r_grid:
            conv, _ = radial_convolve(fx, fy, n, float(r), tol=tol)
            bound = envelope_value(composed, n, alpha, float(r))
            if bound == 0.0:
                if abs(conv) > 10.0 * tol:
                    return CertificationReport(
                        fitted=fitted,
                        passed=False,
                        drift=math.inf,
                        counterexample={"alpha": alpha, "r": float(r), "conv": conv},
                    )
                continue
            worst = max(worst, abs(conv) / bound)
        fitted[alpha] = worst
    values = [v for v in fitted.values() if v > 0]
    drift = max(values) / min(values) if values else 1.0
    return CertificationReport(fitted=fitted, passed=drift <= drift_factor, drift=drift)
