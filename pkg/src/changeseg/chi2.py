"""Chi-squared quantiles from first principles.

The regularized lower incomplete gamma function P(a, x) is evaluated with
the classic series expansion for x < a+1 and the Lentz continued fraction
for x >= a+1 (Cephes / Numerical Recipes style). The quantile is then the
bracketed bisection root of P(k/2, t/2) = alpha.
"""

from __future__ import annotations

import math

_ITMAX = 500
_EPS = 3.0e-16
_FPMIN = 1.0e-300


def _gamma_p_series(a: float, x: float) -> float:
    ap = a
    summ = 1.0 / a
    delta = summ
    for _ in range(_ITMAX):
        ap += 1.0
        delta *= x / ap
        summ += delta
        if abs(delta) < abs(summ) * _EPS:
            break
    return summ * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _ITMAX + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) = gamma(a, x) / Gamma(a)."""
    if a <= 0:
        raise ValueError(f"gamma_p requires a > 0, got {a}")
    if x < 0:
        raise ValueError(f"gamma_p requires x >= 0, got {x}")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_contfrac(a, x)


def chi2_cdf(k: int, t: float) -> float:
    """CDF of the chi-squared distribution with k degrees of freedom."""
    return gamma_p(k / 2.0, t / 2.0)


def chi2_quantile(k: int, alpha: float) -> float:
    """t such that P(chi2_k <= t) = alpha, to ~1e-12 relative accuracy.

    Bracketed bisection on the incomplete-gamma CDF; monotonicity makes
    this unconditionally convergent.
    """
    if not isinstance(k, (int,)) or isinstance(k, bool) or k < 1:
        raise ValueError(f"degrees of freedom must be an integer >= 1, got {k!r}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    lo = 0.0
    hi = float(max(k, 1))
    while chi2_cdf(k, hi) < alpha:
        hi *= 2.0
        if hi > 1e9:
            raise RuntimeError("chi2_quantile bracket expansion failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(k, mid) < alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, lo):
            break
    return 0.5 * (lo + hi)
