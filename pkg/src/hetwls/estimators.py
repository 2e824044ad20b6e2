"""Weighted least squares for misspecified linear models.

The target of every estimator here is the best linear approximation
``beta = E[x x^T]^{-1} E[x f(x)]`` of a possibly non-linear regression
function ``f``. When ``f`` is not linear, weighting by the inverse error
variances is no longer optimal. The optimal diagonal weights take the form
``w(sigma) = 1 / (sigma^2 + Delta)`` where ``Delta = Gamma(A) / Gamma(B)``
with

* ``B = E[x x^T]^{-1}``, the design term, and
* ``A = B E[g(x)^2 x x^T] B``, the misspecification term
  (``g(x) = f(x) - x^T beta``).

This module estimates ``A``, ``B`` and ``Delta`` from data, builds the
adaptive weightings for known and grouped error variances, and provides the
plug-in and sandwich estimators of the asymptotic covariance of
``sqrt(n) (beta_hat - beta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular

from ._chi2 import chi2_quantile
from .errors import (
    DegenerateGroupVariance,
    EmptyGroup,
    InvalidGamma,
    InvalidMoments,
    MissingColumn,
    SingularCovariance,
    SingularDesign,
)

RCOND_TOL = 1e-12
GROUP_VARIANCE_TOL = 1e-12


def _sym(C):
    return 0.5 * (C + C.T)


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegressionData:
    """Design, responses and (optionally) error scales and group labels.

    Parameters
    ----------
    X : array_like, shape (n, p)
        Design matrix, one row per observation.
    y : array_like, shape (n,)
    sigma : array_like, shape (n,), optional
        Known error standard deviations. Required by the inverse-variance and
        known-variance adaptive weightings and by ``nu_hat_1``.
    groups : array_like of int, shape (n,), optional
        Group labels in ``1..M``; observations in a group share one unknown
        error variance. Every label in ``1..M`` must be used.
    """

    X: np.ndarray
    y: np.ndarray
    sigma: Optional[np.ndarray] = None
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, p = X.shape
        if p < 1 or n < p:
            raise ValueError(f"need n >= p >= 1, got n={n}, p={p}")
        y = np.array(self.y, dtype=float).reshape(-1)
        if y.shape != (n,):
            raise ValueError(f"y has length {y.size}, expected {n}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))

        if self.sigma is not None:
            sigma = np.array(self.sigma, dtype=float).reshape(-1)
            if sigma.shape != (n,):
                raise ValueError(f"sigma has length {sigma.size}, expected {n}")
            if not np.all(np.isfinite(sigma) & (sigma > 0)):
                raise ValueError("every sigma must be finite and strictly positive")
            object.__setattr__(self, "sigma", _frozen(sigma))

        if self.groups is not None:
            raw = np.asarray(self.groups)
            groups = raw.astype(np.int64).reshape(-1)
            if groups.shape != (n,) or not np.array_equal(groups, raw.reshape(-1)):
                raise ValueError("groups must be an integer vector of length n")
            if groups.min() < 1:
                raise ValueError("group labels must be in 1..M")
            counts = np.bincount(groups)[1:]
            empty = np.flatnonzero(counts == 0)
            if empty.size:
                raise EmptyGroup(empty[0] + 1)
            object.__setattr__(self, "groups", _frozen(groups, np.int64))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def n_groups(self):
        return 0 if self.groups is None else int(self.groups.max())

    def require_sigma(self):
        if self.sigma is None:
            raise MissingColumn("sigma", "this operation requires known error scales (sigma)")
        return self.sigma

    def require_groups(self):
        if self.groups is None:
            raise MissingColumn("group", "this operation requires group labels")
        return self.groups


@dataclass(frozen=True)
class Trace:
    """Summary functional ``Gamma(C) = tr(C)``."""

    def __call__(self, C):
        return float(np.trace(C))


@dataclass(frozen=True)
class Coordinate:
    """Summary functional ``Gamma(C) = C[j, j]`` (``j`` is 0-based)."""

    j: int

    def __post_init__(self):
        if self.j < 0:
            raise ValueError("coordinate index must be non-negative")

    def __call__(self, C):
        return float(C[self.j, self.j])


GammaFunctional = Union[Trace, Coordinate]


@dataclass(frozen=True)
class Identity:
    """Unit weights (ordinary least squares)."""

    name = "ols"


@dataclass(frozen=True)
class InverseVariance:
    """Weights ``sigma_i^-2`` (standard WLS)."""

    name = "wls"


@dataclass(frozen=True)
class AdaptiveKnown:
    """Estimated optimal weights ``1/(sigma_i^2 + Delta_hat)`` with known sigma."""

    iterations: int = 2
    name = "adaptive_known"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be a positive integer")


@dataclass(frozen=True)
class AdaptiveGrouped:
    """Estimated optimal weights using group membership only."""

    iterations: int = 2
    name = "adaptive_grouped"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be a positive integer")


@dataclass(frozen=True, eq=False)
class FixedWeights:
    w: np.ndarray
    name = "fixed_weights"

    def __post_init__(self):
        w = np.array(self.w, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w) & (w > 0)):
            raise ValueError("fixed weights must be finite and strictly positive")
        object.__setattr__(self, "w", _frozen(w))


@dataclass(frozen=True)
class FixedDelta:
    """Weights ``1/(sigma_i^2 + delta)`` for a user-chosen ``delta >= 0``."""

    delta: float
    name = "fixed_delta"

    def __post_init__(self):
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ValueError("delta must be finite and non-negative")


WeightStrategy = Union[
    Identity, InverseVariance, AdaptiveKnown, AdaptiveGrouped, FixedWeights, FixedDelta
]


@dataclass(frozen=True, eq=False)
class MisspecEstimates:
    B_hat: np.ndarray
    A_hat: Optional[np.ndarray] = None
    Delta_hat: Optional[float] = None
    C_hat: Optional[list] = None


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of :func:`fit`.

    ``nu_hat`` is the sandwich estimate :func:`nu_hat_2` of the asymptotic
    covariance of ``sqrt(n) (beta_hat - beta)``; it needs neither sigma nor
    an estimate of ``A``. ``misspec`` holds the last round of ``A``/``B``/
    ``C_m`` estimates for the adaptive strategies.
    """

    beta: np.ndarray
    weights: np.ndarray
    strategy: WeightStrategy
    gamma: GammaFunctional = field(default_factory=Trace)
    delta: Optional[float] = None
    nu_hat: Optional[np.ndarray] = None
    misspec: Optional[MisspecEstimates] = None


@dataclass(frozen=True)
class WeightMoments:
    """Population moments ``E[w]``, ``E[w^2]`` and ``E[sigma^2 w^2]``."""

    mean_w: float
    mean_w2: float
    mean_s2w2: float

    @classmethod
    def from_discrete(cls, values, probs, weight_fn):
        s = np.asarray(values, dtype=float)
        p = np.asarray(probs, dtype=float)
        w = np.asarray(weight_fn(s), dtype=float) * np.ones_like(s)
        return cls(
            mean_w=float(p @ w),
            mean_w2=float(p @ w**2),
            mean_s2w2=float(p @ (s**2 * w**2)),
        )


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def _qr_r(Xs):
    """R factor of a thin QR plus its reciprocal condition number."""
    q, r = np.linalg.qr(Xs)
    sv = np.linalg.svd(r, compute_uv=False)
    rcond = sv[-1] / sv[0] if sv[0] > 0 else 0.0
    return q, r, rcond


def _check_weights(w, n):
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape != (n,):
        raise ValueError(f"weights have length {w.size}, expected {n}")
    if not np.all(np.isfinite(w) & (w > 0)):
        raise ValueError("weights must be finite and strictly positive")
    return w


def solve_weighted(data, w):
    """Minimize ``sum_i w_i (y_i - x_i^T beta)^2``.

    Rows of ``X`` and ``y`` are scaled by ``sqrt(w_i)`` and the scaled system
    is solved through a thin QR factorization, so the normal matrix
    ``X^T W X`` is never formed.

    Raises
    ------
    SingularDesign
        If the reciprocal condition number of the scaled design is below
        ``1e-12``.
    """
    w = _check_weights(w, data.n)
    sw = np.sqrt(w)
    q, r, rcond = _qr_r(data.X * sw[:, None])
    if not rcond >= RCOND_TOL:
        raise SingularDesign(rcond)
    return solve_triangular(r, q.T @ (data.y * sw))


def estimate_B(data):
    """``(X^T X / n)^{-1}``, symmetrized."""
    _, r, rcond = _qr_r(data.X)
    if not rcond >= RCOND_TOL:
        raise SingularDesign(rcond)
    r_inv = solve_triangular(r, np.eye(data.p))
    return _sym(data.n * (r_inv @ r_inv.T))


def estimate_g_squared(data, beta):
    """Squared residuals minus the known error variances.

    Entries can be negative; no clamping happens here.
    """
    sigma = data.require_sigma()
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape != (data.p,):
        raise ValueError(f"beta has length {beta.size}, expected {data.p}")
    resid = data.y - data.X @ beta
    return resid**2 - sigma**2


def estimate_A(data, beta, B_hat):
    """Plug-in estimate of ``A = B E[g^2 x x^T] B`` with ``sigma^-4`` weights."""
    sigma = data.require_sigma()
    g2 = estimate_g_squared(data, beta)
    w4 = sigma**-4.0
    M = (data.X * (g2 * w4)[:, None]).T @ data.X / w4.sum()
    B_hat = np.asarray(B_hat, dtype=float)
    return _sym(B_hat.T @ M @ B_hat)


def estimate_delta(A_hat, B_hat, gamma=Trace()):
    """``max(Gamma(A_hat) / Gamma(B_hat), 0)``."""
    gb = gamma(B_hat)
    if not gb > 0:
        raise InvalidGamma(f"Gamma(B_hat) = {gb!r} must be positive")
    return max(gamma(A_hat) / gb, 0.0)


def optimal_weights_known(data, delta):
    if not delta >= 0:
        raise ValueError("delta must be non-negative")
    return 1.0 / (data.require_sigma() ** 2 + delta)


def estimate_Cm(data, beta):
    """Per-group mean of ``r_i^2 x_i x_i^T``, one ``p x p`` matrix per label."""
    groups = data.require_groups()
    beta = np.asarray(beta, dtype=float).reshape(-1)
    r2 = (data.y - data.X @ beta) ** 2
    out = []
    for m in range(1, data.n_groups + 1):
        mask = groups == m
        count = int(mask.sum())
        if count == 0:
            raise EmptyGroup(m)
        Xm = data.X[mask]
        out.append(_sym((Xm * r2[mask, None]).T @ Xm / count))
    return out


def optimal_weights_grouped(C_hat, B_hat, groups, gamma=Trace()):
    """Weights ``Gamma(B) / Gamma(B C_m B)`` looked up by each observation's group."""
    gb = gamma(B_hat)
    per_group = np.empty(len(C_hat))
    for m, C in enumerate(C_hat, start=1):
        denom = gamma(B_hat.T @ C @ B_hat)
        if not denom > GROUP_VARIANCE_TOL:
            raise DegenerateGroupVariance(m, denom)
        per_group[m - 1] = gb / denom
    if not np.all(per_group > 0):
        raise InvalidGamma(f"Gamma(B_hat) = {gb!r} must be positive")
    return per_group[np.asarray(groups, dtype=np.int64) - 1]


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def fit(data, strategy=None, gamma=None):
    """Fit ``beta`` by weighted least squares under a weighting strategy.

    The adaptive strategies start from the OLS estimate and then repeat
    ``iterations`` times: estimate the weight ingredients at the current
    ``beta``, rebuild the weights and re-solve.

    Parameters
    ----------
    data : RegressionData
    strategy : WeightStrategy, default AdaptiveKnown()
    gamma : Trace or Coordinate, default Trace()

    Returns
    -------
    FitResult
    """
    strategy = AdaptiveKnown() if strategy is None else strategy
    gamma = Trace() if gamma is None else gamma
    n = data.n
    delta = None
    misspec = None

    if isinstance(strategy, Identity):
        w = np.ones(n)
        beta = solve_weighted(data, w)
    elif isinstance(strategy, InverseVariance):
        w = data.require_sigma() ** -2.0
        beta = solve_weighted(data, w)
    elif isinstance(strategy, FixedWeights):
        w = _check_weights(strategy.w, n)
        beta = solve_weighted(data, w)
    elif isinstance(strategy, FixedDelta):
        delta = float(strategy.delta)
        w = optimal_weights_known(data, delta)
        beta = solve_weighted(data, w)
    elif isinstance(strategy, AdaptiveKnown):
        data.require_sigma()
        B_hat = estimate_B(data)
        beta = solve_weighted(data, np.ones(n))
        for _ in range(strategy.iterations):
            A_hat = estimate_A(data, beta, B_hat)
            delta = estimate_delta(A_hat, B_hat, gamma)
            w = optimal_weights_known(data, delta)
            beta = solve_weighted(data, w)
        misspec = MisspecEstimates(B_hat=B_hat, A_hat=A_hat, Delta_hat=delta)
    elif isinstance(strategy, AdaptiveGrouped):
        groups = data.require_groups()
        B_hat = estimate_B(data)
        beta = solve_weighted(data, np.ones(n))
        for _ in range(strategy.iterations):
            C_hat = estimate_Cm(data, beta)
            w = optimal_weights_grouped(C_hat, B_hat, groups, gamma)
            beta = solve_weighted(data, w)
        misspec = MisspecEstimates(B_hat=B_hat, C_hat=C_hat)
    else:
        raise TypeError(f"unknown weighting strategy {strategy!r}")

    B_for_nu = misspec.B_hat if misspec is not None else estimate_B(data)
    return FitResult(
        beta=_frozen(beta),
        weights=_frozen(w),
        strategy=strategy,
        gamma=gamma,
        delta=delta,
        nu_hat=_frozen(nu_hat_2(data, B_for_nu, w, beta)),
        misspec=misspec,
    )


# ---------------------------------------------------------------------------
# Asymptotic covariance
# ---------------------------------------------------------------------------


def nu_hat_1(data, A_hat, B_hat, weights):
    """Plug-in asymptotic covariance for known error variances.

    ``[n (1'W^2 1) A + n (1'W Sigma W 1) B] / (1'W 1)^2``
    """
    sigma = data.require_sigma()
    w = _check_weights(weights, data.n)
    sw = w.sum()
    nu = data.n * ((w**2).sum() * np.asarray(A_hat) + (w**2 * sigma**2).sum() * np.asarray(B_hat))
    return _sym(nu / sw**2)


def nu_hat_2(data, B_hat, weights, beta):
    """Sandwich asymptotic covariance from squared residuals; sigma not needed.

    With unit weights this is the classical heteroskedasticity-consistent
    (HC0) covariance of OLS scaled by ``n``.
    """
    w = _check_weights(weights, data.n)
    r2 = (data.y - data.X @ np.asarray(beta, dtype=float)) ** 2
    meat = (data.X * (r2 * w**2)[:, None]).T @ data.X
    B_hat = np.asarray(B_hat, dtype=float)
    return _sym(data.n * B_hat @ meat @ B_hat / w.sum() ** 2)


def nu_oracle(data, A, B, weights):
    """:func:`nu_hat_1` evaluated at the true ``A`` and ``B``."""
    return nu_hat_1(data, A, B, weights)


def theoretical_nu(A, B, moments):
    """Asymptotic covariance ``(E[w^2] A + E[sigma^2 w^2] B) / E[w]^2``.

    ``moments`` is a :class:`WeightMoments` or a mapping with keys
    ``mean_w``, ``mean_w2`` and ``mean_s2w2``.
    """
    if not isinstance(moments, WeightMoments):
        moments = WeightMoments(**moments)
    if not moments.mean_w > 0:
        raise InvalidMoments(f"E[w] = {moments.mean_w!r} must be positive")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    return _sym((moments.mean_w2 * A + moments.mean_s2w2 * B) / moments.mean_w**2)


def wald_statistic(beta_hat, nu_hat, beta0, n):
    """``n (beta_hat - beta0)^T nu_hat^{-1} (beta_hat - beta0)``."""
    nu_hat = np.asarray(nu_hat, dtype=float)
    d = np.asarray(beta_hat, dtype=float) - np.asarray(beta0, dtype=float)
    if not np.all(np.isfinite(nu_hat)):
        raise SingularCovariance("covariance has non-finite entries")
    sv = np.linalg.svd(nu_hat, compute_uv=False)
    if not (sv[0] > 0 and sv[-1] / sv[0] >= RCOND_TOL):
        raise SingularCovariance("covariance matrix is numerically singular")
    return float(n * d @ np.linalg.solve(nu_hat, d))


def confidence_region_contains(beta_hat, nu_hat, beta0, level=0.95, n=1):
    """Whether ``beta0`` lies in the Wald ellipsoid at ``level``.

    The statistic is compared with the chi-square quantile on ``p`` degrees
    of freedom. An indefinite ``nu_hat`` (possible for ``nu_hat_1``, whose
    ``A_hat`` need not be PSD) is used as given.
    """
    p = np.asarray(beta_hat).size
    return wald_statistic(beta_hat, nu_hat, beta0, n) <= chi2_quantile(level, p)


def strategy_from_name(name, iterations=2, weights=None, delta=None):
    """Build a strategy from its configuration name."""
    key = name.lower().replace("-", "_")
    if key in ("ols", "identity"):
        return Identity()
    if key in ("wls", "inverse_variance"):
        return InverseVariance()
    if key in ("adaptive_known", "delta"):
        return AdaptiveKnown(iterations)
    if key in ("adaptive_grouped", "grouped"):
        return AdaptiveGrouped(iterations)
    if key == "fixed_weights":
        if weights is None:
            raise ValueError("fixed_weights needs a 'weights' vector")
        return FixedWeights(weights)
    if key == "fixed_delta":
        if delta is None:
            raise ValueError("fixed_delta needs a 'delta' value")
        return FixedDelta(delta)
    raise ValueError(f"unknown strategy '{name}'")


def gamma_from_spec(spec):
    """``"trace"`` or ``{"coordinate": j}`` to a functional."""
    if spec is None or spec == "trace":
        return Trace()
    if isinstance(spec, dict) and "coordinate" in spec:
        return Coordinate(int(spec["coordinate"]))
    raise ValueError(f"unknown gamma specification {spec!r}")


__all__: Sequence[str] = [
    "AdaptiveGrouped",
    "AdaptiveKnown",
    "Coordinate",
    "FitResult",
    "FixedDelta",
    "FixedWeights",
    "GammaFunctional",
    "Identity",
    "InverseVariance",
    "MisspecEstimates",
    "RegressionData",
    "Trace",
    "WeightMoments",
    "WeightStrategy",
    "confidence_region_contains",
    "estimate_A",
    "estimate_B",
    "estimate_Cm",
    "estimate_delta",
    "estimate_g_squared",
    "fit",
    "gamma_from_spec",
    "nu_hat_1",
    "nu_hat_2",
    "nu_oracle",
    "optimal_weights_grouped",
    "optimal_weights_known",
    "solve_weighted",
    "strategy_from_name",
    "theoretical_nu",
    "wald_statistic",
]
