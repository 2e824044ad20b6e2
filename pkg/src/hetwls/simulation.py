"""Monte Carlo engine for misspecified heteroskedastic regression.

The data-generating process draws ``x ~ Unif(0, 1)``, an error scale
``sigma`` (either independently of ``x`` from a discrete law, or as a step
function of ``x``) and returns ``y = f(x) + sigma * eps`` with standard normal
``eps``. The fitted model is always the straight line ``beta_0 + beta_1 x``.

Every replicate draws from its own counter-based Philox stream keyed on
``(seed, replicate_index)``, so results do not depend on execution order or
on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import integrate

from ._chi2 import chi2_quantile
from .errors import EstimationError, QuadratureFailure, SingularCovariance
from .estimators import (
    AdaptiveGrouped,
    AdaptiveKnown,
    Identity,
    InverseVariance,
    RegressionData,
    Trace,
    WeightMoments,
    estimate_A,
    estimate_B,
    fit,
    nu_hat_1,
    nu_oracle,
    theoretical_nu,
    wald_statistic,
)

log = logging.getLogger(__name__)

QUAD_TOL = 1e-10
ESTIMATORS = ("nu1", "nu2", "oracle")


# ---------------------------------------------------------------------------
# Regression functions and sigma laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Quadratic:
    """``f(x) = x^2``."""

    def __call__(self, x):
        return np.asarray(x, dtype=float) ** 2

    breakpoints = ()


@dataclass(frozen=True)
class Linear:
    """``f(x) = beta[0] + beta[1] x``; the fitted model is correct."""

    beta: tuple = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if len(self.beta) != 2:
            raise ValueError("linear regression function takes (intercept, slope)")

    def __call__(self, x):
        return self.beta[0] + self.beta[1] * np.asarray(x, dtype=float)

    breakpoints = ()


@dataclass(frozen=True)
class CustomTable:
    """Piecewise-linear interpolation through ``(x, f)`` nodes covering [0, 1]."""

    x: tuple
    f: tuple

    def __post_init__(self):
        xs = np.asarray(self.x, dtype=float)
        fs = np.asarray(self.f, dtype=float)
        if xs.ndim != 1 or xs.shape != fs.shape or xs.size < 2:
            raise ValueError("custom table needs matching x and f vectors of length >= 2")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("custom table x must be strictly increasing")
        if xs[0] > 0 or xs[-1] < 1:
            raise ValueError("custom table must cover [0, 1]")
        object.__setattr__(self, "x", tuple(xs))
        object.__setattr__(self, "f", tuple(fs))

    def __call__(self, x):
        return np.interp(x, self.x, self.f)

    @property
    def breakpoints(self):
        return tuple(v for v in self.x if 0 < v < 1)


RegressionFn = Union[Quadratic, Linear, CustomTable]


@dataclass(frozen=True)
class DiscreteSigma:
    """``sigma`` drawn independently of ``x`` with ``P(sigma = values[k]) = probs[k]``."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.ndim != 1 or v.shape != p.shape or v.size == 0:
            raise ValueError("sigma law needs matching value/probability vectors")
        if np.any(v <= 0) or np.any(p < 0):
            raise ValueError("sigma values must be positive and probabilities non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "values", tuple(v))
        object.__setattr__(self, "probs", tuple(p))

    depends_on_x = False

    def sample(self, x, rng):
        u = rng.random(np.size(x))
        cdf = np.cumsum(self.probs)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(self.values) - 1)
        return np.asarray(self.values)[idx]

    def moments(self, weight_fn):
        return WeightMoments.from_discrete(self.values, self.probs, weight_fn)


@dataclass(frozen=True)
class StepOfX:
    """``sigma`` as a step function of ``x``.

    With thresholds ``t_1 < ... < t_{K-1}`` and values ``v_1..v_K``: ``x < t_1``
    gives ``v_1``, ``x > t_{K-1}`` gives ``v_K`` and interior pieces are closed,
    so ``thresholds=(0.05, 0.95)`` reads ``0.05 <= x <= 0.95 -> v_2``.
    """

    thresholds: tuple
    values: tuple

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.size != t.size + 1:
            raise ValueError("step law needs exactly one more value than thresholds")
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(v <= 0):
            raise ValueError("sigma values must be positive")
        object.__setattr__(self, "thresholds", tuple(t))
        object.__setattr__(self, "values", tuple(v))

    depends_on_x = True

    def sigma_of(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.thresholds, x, side="right")
        if len(self.thresholds) >= 2:
            idx = np.where(x == self.thresholds[-1], idx - 1, idx)
        return np.asarray(self.values)[idx]

    def sample(self, x, rng):
        return self.sigma_of(x)

    @property
    def breakpoints(self):
        return tuple(t for t in self.thresholds if 0 < t < 1)

    def moments(self, weight_fn):
        lo = (0.0,) + tuple(np.clip(self.thresholds, 0, 1))
        hi = tuple(np.clip(self.thresholds, 0, 1)) + (1.0,)
        mass = np.array(hi) - np.array(lo)
        return WeightMoments.from_discrete(self.values, mass, weight_fn)


SigmaLaw = Union[DiscreteSigma, StepOfX]

DEFAULT_SIGMA_LAW = DiscreteSigma(values=(0.01, 0.1, 1.0), probs=(0.05, 0.9, 0.05))
DEFAULT_STEP_LAW = StepOfX(thresholds=(0.05, 0.95), values=(0.01, 0.1, 1.0))


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating process with ``x ~ Unif(0, 1)`` and standard normal noise."""

    regression_fn: RegressionFn = field(default_factory=Quadratic)
    sigma_law: SigmaLaw = DEFAULT_SIGMA_LAW
    n: int = 100
    replicates: int = 1000
    seed: int = 20160301

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2 for a line fit")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def replicate_rng(seed, replicate_index):
    """Independent Philox stream for one replicate."""
    ss = np.random.SeedSequence([int(seed), int(replicate_index)])
    return np.random.Generator(np.random.Philox(ss))


def generate_dataset(config, replicate_index):
    """Draw one dataset.

    Draw order is fixed (x, then sigma, then noise) so a dataset depends only
    on ``(config, replicate_index)``. Group labels number the distinct sigma
    values present in the sample in increasing order, so no label is empty.
    """
    rng = replicate_rng(config.seed, replicate_index)
    n = config.n
    x = rng.random(n)
    sigma = config.sigma_law.sample(x, rng)
    eps = rng.standard_normal(n)
    y = config.regression_fn(x) + sigma * eps
    groups = np.searchsorted(np.unique(sigma), sigma) + 1
    return RegressionData(np.column_stack([np.ones(n), x]), y, sigma, groups)


# ---------------------------------------------------------------------------
# Oracle quantities by quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OracleQuantities:
    beta_true: np.ndarray
    A_true: np.ndarray
    B_true: np.ndarray
    delta_true: float
    wls_limit: np.ndarray
    mean_g2: float


def _quad(fn, name, points):
    kw = {"points": points, "limit": 200} if points else {"limit": 200}
    val, err = integrate.quad(fn, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, **kw)
    if not err <= QUAD_TOL:
        raise QuadratureFailure(name, err, QUAD_TOL)
    return val


def _moment_matrix(fn, name, points):
    """``E[(1, x)(1, x)^T fn(x)]`` for ``x ~ Unif(0, 1)``."""
    m = [_quad(lambda x, k=k: x**k * fn(x), f"{name}[x^{k}]", points) for k in range(3)]
    return np.array([[m[0], m[1]], [m[1], m[2]]])


def _moment_vector(fn, name, points):
    return np.array([_quad(lambda x, k=k: x**k * fn(x), f"{name}[x^{k}]", points) for k in range(2)])


def oracle_quantities(config, gamma=None):
    """Population ``beta``, ``A``, ``B``, ``Delta`` and the WLS limit, by quadrature.

    ``wls_limit`` is the almost-sure limit ``E[x x^T w]^{-1} E[w x f(x)]`` of
    inverse-variance WLS with ``w = sigma^-2``. It equals ``beta`` when sigma
    is independent of ``x``.
    """
    gamma = Trace() if gamma is None else gamma
    f = config.regression_fn
    law = config.sigma_law
    points = sorted(set(getattr(f, "breakpoints", ())) | set(getattr(law, "breakpoints", ())))

    G = _moment_matrix(lambda x: 1.0, "E[xx']", points)
    B = np.linalg.inv(G)
    B = 0.5 * (B + B.T)
    beta = np.linalg.solve(G, _moment_vector(lambda x: float(f(x)), "E[xf]", points))

    def g(x):
        return float(f(x)) - beta[0] - beta[1] * x

    M = _moment_matrix(lambda x: g(x) ** 2, "E[g^2 xx']", points)
    A = B @ M @ B
    A = 0.5 * (A + A.T)
    mean_g2 = _quad(lambda x: g(x) ** 2, "E[g^2]", points)
    delta = max(gamma(A) / gamma(B), 0.0)

    if law.depends_on_x:
        def w(x):
            return float(law.sigma_of(x)) ** -2.0

        Gw = _moment_matrix(w, "E[xx'w]", points)
        wls_limit = np.linalg.solve(Gw, _moment_vector(lambda x: w(x) * float(f(x)), "E[wxf]", points))
    else:
        wls_limit = beta.copy()

    return OracleQuantities(
        beta_true=beta,
        A_true=A,
        B_true=B,
        delta_true=float(delta),
        wls_limit=wls_limit,
        mean_g2=mean_g2,
    )


def theoretical_nus(config, oracle=None, gamma=None):
    """Asymptotic covariance for OLS, WLS and the optimal weighting.

    Only meaningful when sigma is independent of ``x``.
    """
    oracle = oracle_quantities(config, gamma) if oracle is None else oracle
    law = config.sigma_law
    d = oracle.delta_true
    A, B = oracle.A_true, oracle.B_true
    return {
        "ols": theoretical_nu(A, B, law.moments(lambda s: np.ones_like(s))),
        "wls": theoretical_nu(A, B, law.moments(lambda s: s**-2.0)),
        "adaptive_known": theoretical_nu(A, B, law.moments(lambda s: 1.0 / (s**2 + d))),
        "adaptive_grouped": theoretical_nu(A, B, law.moments(lambda s: 1.0 / (s**2 + d))),
    }


# ---------------------------------------------------------------------------
# Ellipses
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Ellipse:
    """Confidence ellipse ``{b : n (b - c)^T nu^{-1} (b - c) <= q}`` relative to its center.

    ``semi_axes`` are sorted in decreasing order; column ``k`` of ``axes`` is
    the unit direction of ``semi_axes[k]``.
    """

    semi_axes: np.ndarray
    axes: np.ndarray
    quantile: float

    @property
    def angle(self):
        """Angle of the major axis from the first coordinate, in (-pi/2, pi/2]."""
        v = self.axes[:, 0]
        a = np.arctan2(v[1], v[0])
        if a <= -np.pi / 2:
            a += np.pi
        elif a > np.pi / 2:
            a -= np.pi
        return float(a)

    def boundary(self, center, num=100):
        t = np.linspace(0.0, 2 * np.pi, num)
        unit = np.stack([np.cos(t), np.sin(t)])
        return np.asarray(center)[:, None] + self.axes @ (self.semi_axes[:, None] * unit)


def asymptotic_ellipse(nu, level=0.95, n=1):
    """Semi-axes of the level-``level`` region for an estimator with covariance ``nu / n``."""
    nu = 0.5 * (np.asarray(nu, dtype=float) + np.asarray(nu, dtype=float).T)
    vals, vecs = np.linalg.eigh(nu)
    if not (vals[-1] > 0 and vals[0] / vals[-1] >= 1e-12):
        raise SingularCovariance("ellipse needs a positive definite covariance")
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    q = chi2_quantile(level, nu.shape[0])
    return Ellipse(semi_axes=np.sqrt(vals * q / n), axes=vecs, quantile=q)


# ---------------------------------------------------------------------------
# Replicate engine
# ---------------------------------------------------------------------------

_STRATEGY_LABELS = {
    "wls": "WLS",
    "ols": "OLS",
    "adaptive_known": "Delta",
    "adaptive_grouped": "Grouped",
}


def default_strategies(iterations=2):
    return [InverseVariance(), Identity(), AdaptiveKnown(iterations), AdaptiveGrouped(iterations)]


@dataclass(eq=False)
class SimReport:
    """Per-replicate estimates and coverage indicators for each strategy.

    ``betas[name]`` has one row per replicate (NaN for a failed fit).
    ``covered[(name, estimator)]`` is a float array with 1/0 per replicate and
    NaN where the estimator does not apply or the fit failed.
    """

    config: DgpConfig
    oracle: OracleQuantities
    strategies: list
    estimators: tuple
    betas: dict
    covered: dict
    failures: dict
    runtime: float
    level: float = 0.95

    def ok(self, name):
        return np.all(np.isfinite(self.betas[name]), axis=1)

    def mean(self, name):
        return self.betas[name][self.ok(name)].mean(axis=0)

    def covariance(self, name):
        return np.cov(self.betas[name][self.ok(name)], rowvar=False)

    def mc_se(self, name):
        """Monte Carlo standard error of :meth:`mean`."""
        b = self.betas[name][self.ok(name)]
        return b.std(axis=0, ddof=1) / np.sqrt(b.shape[0])

    def coverage(self, name, estimator):
        c = self.covered[(name, estimator)]
        c = c[np.isfinite(c)]
        return float(c.mean()) if c.size else float("nan")

    # -- CSV output --------------------------------------------------------

    def replicate_rows(self):
        """One row per replicate; per-strategy estimates and coverage indicators."""
        p = self.oracle.beta_true.size
        tags = {"nu1": "nu1", "nu2": "nu2", "oracle": "or"}
        header = ["replicate"]
        for name in self.strategies:
            header += [f"{name}_beta{j}" for j in range(p)]
            header += [f"{name}_covered_{tags[e]}" for e in self.estimators]
        rows = [header]
        for r in range(self.config.replicates):
            row = [r]
            for name in self.strategies:
                row += [_fmt(v) for v in self.betas[name][r]]
                for e in self.estimators:
                    c = self.covered[(name, e)][r]
                    row.append(int(c) if np.isfinite(c) else "")
            rows.append(row)
        return rows

    def summary_rows(self):
        """Coverage table: one row per variance estimator, one column per strategy."""
        labels = [_STRATEGY_LABELS.get(s, s) for s in self.strategies]
        rows = [["estimator"] + labels]
        for e in self.estimators:
            row = [e]
            for s in self.strategies:
                cov = self.coverage(s, e) if (s, e) in self.covered else float("nan")
                row.append("" if not np.isfinite(cov) else f"{cov:.3f}")
            rows.append(row)
        rows.append(["failures"] + [self.failures[s] for s in self.strategies])
        rows.append(["replicates"] + [self.config.replicates] * len(self.strategies))
        return rows

    def ellipse_rows(self, num=100):
        """Boundary points of the theoretical 95% ellipse per strategy, centred at the limit."""
        rows = [["strategy", "point", "beta0", "beta1"]]
        if self.config.sigma_law.depends_on_x:
            return rows
        nus = theoretical_nus(self.config, self.oracle)
        for name in self.strategies:
            if name not in nus:
                continue
            ell = asymptotic_ellipse(nus[name], self.level, self.config.n)
            pts = ell.boundary(self.oracle.beta_true, num)
            for k in range(num):
                rows.append([name, k, _fmt(pts[0, k]), _fmt(pts[1, k])])
        return rows


def _fmt(v):
    return "nan" if not np.isfinite(v) else repr(float(v))


def rows_to_csv(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _covered(beta_hat, nu, beta0, n, q):
    try:
        return float(wald_statistic(beta_hat, nu, beta0, n) <= q)
    except SingularCovariance:
        return 0.0


def _run_replicate(config, r, strategies, estimators, gamma, oracle, q):
    data = generate_dataset(config, r)
    fits = {}
    failed = set()
    for st in strategies:
        try:
            fits[st.name] = fit(data, st, gamma)
        except EstimationError as exc:
            log.debug("replicate %d, %s failed: %s", r, st.name, exc)
            failed.add(st.name)

    A_hat = B_hat = None
    if "nu1" in estimators:
        # One A_hat per dataset, from the known-variance adaptive fit.
        try:
            B_hat = estimate_B(data)
            ref = fits.get("adaptive_known") or fit(data, AdaptiveKnown(), gamma)
            A_hat = estimate_A(data, ref.beta, B_hat)
        except EstimationError as exc:
            log.debug("replicate %d: A_hat unavailable: %s", r, exc)

    p = data.p
    out = {}
    for st in strategies:
        name = st.name
        cov = {}
        if name in failed:
            out[name] = (np.full(p, np.nan), {e: np.nan for e in estimators}, True)
            continue
        ft = fits[name]
        n = data.n
        beta0 = oracle.beta_true
        for e in estimators:
            if e == "nu2":
                cov[e] = _covered(ft.beta, ft.nu_hat, beta0, n, q)
            elif isinstance(st, AdaptiveGrouped):
                cov[e] = np.nan
            elif e == "nu1":
                cov[e] = np.nan if A_hat is None else _covered(
                    ft.beta, nu_hat_1(data, A_hat, B_hat, ft.weights), beta0, n, q
                )
            elif e == "oracle":
                cov[e] = _covered(
                    ft.beta, nu_oracle(data, oracle.A_true, oracle.B_true, ft.weights), beta0, n, q
                )
        out[name] = (np.asarray(ft.beta), cov, False)
    return out


def run_monte_carlo(
    config,
    strategies=None,
    variance_estimators=ESTIMATORS,
    gamma=None,
    level=0.95,
    threads=1,
):
    """Fit every strategy on ``config.replicates`` independent datasets.

    For each replicate and strategy the 95% (``level``) Wald region from each
    requested variance estimator is checked for the true ``beta``:

    * ``"nu1"``: plug-in with ``A_hat`` estimated once per dataset at the
      known-variance adaptive estimate; needs sigma.
    * ``"nu2"``: residual sandwich; available for every strategy.
    * ``"oracle"``: ``nu1`` with the true ``A`` and ``B``; needs sigma.

    The grouped strategy gets only ``nu2``. A replicate whose fit raises an
    estimation error is excluded for that strategy and counted in
    ``failures``.
    """
    gamma = Trace() if gamma is None else gamma
    strategies = default_strategies() if strategies is None else list(strategies)
    names = [s.name for s in strategies]
    if len(set(names)) != len(names):
        raise ValueError("strategies must have distinct names")
    unknown = set(variance_estimators) - set(ESTIMATORS)
    if unknown:
        raise ValueError(f"unknown variance estimators {sorted(unknown)}")
    estimators = tuple(variance_estimators)

    start = time.perf_counter()
    oracle = oracle_quantities(config, gamma)
    q = chi2_quantile(level, oracle.beta_true.size)
    N = config.replicates

    def work(r):
        return _run_replicate(config, r, strategies, estimators, gamma, oracle, q)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(N)))
    else:
        results = [work(r) for r in range(N)]

    p = oracle.beta_true.size
    betas = {name: np.empty((N, p)) for name in names}
    covered = {(name, e): np.empty(N) for name in names for e in estimators}
    failures = {name: 0 for name in names}
    for r, res in enumerate(results):
        for name in names:
            b, cov, failed = res[name]
            betas[name][r] = b
            failures[name] += int(failed)
            for e in estimators:
                covered[(name, e)][r] = cov[e]
    for name in names:
        if failures[name]:
            log.warning("%s: %d of %d replicates failed", name, failures[name], N)

    return SimReport(
        config=config,
        oracle=oracle,
        strategies=names,
        estimators=estimators,
        betas=betas,
        covered=covered,
        failures=failures,
        runtime=time.perf_counter() - start,
        level=level,
    )
