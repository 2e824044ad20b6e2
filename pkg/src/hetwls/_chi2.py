"""Chi-square quantiles for confidence-region membership tests."""

import math

from scipy.special import gammainc


def chi2_cdf(x, df):
    """P(X <= x) for X ~ chi-square with ``df`` degrees of freedom."""
    if x <= 0.0:
        return 0.0
    return float(gammainc(0.5 * df, 0.5 * x))


def chi2_quantile(level, df, tol=1e-12):
    """Return q with P(chi2_df <= q) = level.

    Two degrees of freedom use the closed form ``-2 log(1 - level)``.
    Otherwise the regularized lower incomplete gamma function is inverted by
    bisection, which is slow but cannot fail on a bracketed monotone target.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if df == 2:
        return -2.0 * math.log1p(-level)

    lo, hi = 0.0, max(1.0, float(df))
    while chi2_cdf(hi, df) < level:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, df) < level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
