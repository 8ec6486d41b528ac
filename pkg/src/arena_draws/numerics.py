"""Scalar numerical primitives for the Gaussian and Glicko-2 machinery."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

from .errors import DomainError, NumericalError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_STD_NORMAL = NormalDist()

# Beyond this many standard deviations into the lower tail the moment
# corrections switch to their asymptotic forms.
TAIL_CUTOFF = 30.0

# Tighter than the customary 1e-6 so the root residual also stays below 1e-6.
VOLATILITY_TOL = 1e-10
VOLATILITY_MAX_ITER = 100


def _check_finite(x: float, name: str = "x") -> None:
    if not math.isfinite(x):
        raise DomainError(f"{name} must be finite, got {x!r}")


def std_normal_pdf(x: float) -> float:
    _check_finite(x)
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def std_normal_cdf(x: float) -> float:
    # erfc keeps full relative precision in the lower tail.
    _check_finite(x)
    return 0.5 * math.erfc(-x / _SQRT2)


def std_normal_inv_cdf(p: float) -> float:
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must lie in (0, 1), got {p!r}")
    return _STD_NORMAL.inv_cdf(p)


@dataclass(frozen=True)
class TruncatedMoments:
    """Mean (v) and variance (w) corrections of a truncated Gaussian."""

    v: float
    w: float


def truncated_moments_win(t: float, alpha: float) -> TruncatedMoments:
    """Corrections for a Gaussian conditioned on exceeding ``alpha`` (decisive result)."""
    _check_finite(t, "t")
    _check_finite(alpha, "alpha")
    x = t - alpha
    if x < -TAIL_CUTOFF:
        # Asymptotic Mills-ratio series; v -> -x and w -> 1.
        z = 1.0 / (x * x)
        v = -x / (1.0 - z * (1.0 - z * (3.0 - z * (15.0 - 105.0 * z))))
        return TruncatedMoments(v, min(v * (v + x), 1.0 - 1e-16))
    v = std_normal_pdf(x) / std_normal_cdf(x)
    w = v * (v + x)
    # Rounding can push w a hair outside (0, 1) far in either tail.
    w = min(max(w, math.ulp(0.0)), 1.0 - 1e-16)
    return TruncatedMoments(v, w)


def truncated_moments_draw(t: float, alpha: float) -> TruncatedMoments:
    """Corrections for a Gaussian conditioned on ``|X + t| < alpha`` (draw)."""
    _check_finite(t, "t")
    _check_finite(alpha, "alpha")
    if alpha < 0:
        raise DomainError(f"alpha must be non-negative, got {alpha!r}")
    # Evaluate on |t| and restore the sign so v is exactly odd in t.
    sign = -1.0 if t < 0 else 1.0
    t = abs(t)
    hi = alpha - t
    lo = -alpha - t
    d = std_normal_cdf(hi) - std_normal_cdf(lo)
    if d <= 0.0 or not math.isfinite(d) or d < 1e-300:
        raise NumericalError(
            f"draw region |x + {t:g}| < {alpha:g} has vanishing probability; widen the draw margin"
        )
    pdf_hi = std_normal_pdf(hi)
    pdf_lo = std_normal_pdf(lo)
    v = (pdf_lo - pdf_hi) / d
    w = v * v + (hi * pdf_hi + (alpha + t) * pdf_lo) / d
    w = min(max(w, math.ulp(0.0)), 1.0 - 1e-16)
    return TruncatedMoments(sign * v, w)


def volatility_objective(x: float, delta_sq: float, phi_sq: float, v: float, sigma: float, tau: float) -> float:
    """The Glicko-2 volatility function whose root is ``ln(sigma'^2)``."""
    ex = math.exp(x)
    a = math.log(sigma * sigma)
    denom = phi_sq + v + ex
    return ex * (delta_sq - phi_sq - v - ex) / (2.0 * denom * denom) - (x - a) / (tau * tau)


def solve_volatility(delta_sq: float, phi_sq: float, v: float, sigma: float, tau: float) -> float:
    """New Glicko-2 volatility via the Illinois regula-falsi iteration."""
    for name, value in (("delta_sq", delta_sq), ("phi_sq", phi_sq), ("v", v), ("sigma", sigma), ("tau", tau)):
        _check_finite(value, name)
    if delta_sq < 0 or phi_sq <= 0 or v <= 0 or sigma <= 0 or tau <= 0:
        raise DomainError("solve_volatility needs delta_sq >= 0 and positive phi_sq, v, sigma, tau")

    def f(x: float) -> float:
        return volatility_objective(x, delta_sq, phi_sq, v, sigma, tau)

    a = math.log(sigma * sigma)
    big_a = a
    if delta_sq > phi_sq + v:
        big_b = math.log(delta_sq - phi_sq - v)
    else:
        k = 1
        while f(a - k * tau) < 0:
            k += 1
            if k > VOLATILITY_MAX_ITER:
                raise NumericalError("could not bracket the volatility root")
        big_b = a - k * tau

    f_a = f(big_a)
    f_b = f(big_b)
    for _ in range(VOLATILITY_MAX_ITER):
        if abs(big_b - big_a) <= VOLATILITY_TOL:
            return math.exp(big_a / 2.0)
        big_c = big_a + (big_a - big_b) * f_a / (f_b - f_a)
        f_c = f(big_c)
        if f_c * f_b <= 0:
            big_a, f_a = big_b, f_b
        else:
            f_a = f_a / 2.0
        big_b, f_b = big_c, f_c
    raise NumericalError(f"volatility iteration did not converge in {VOLATILITY_MAX_ITER} steps")
