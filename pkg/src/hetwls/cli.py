"""Batch command-line front end.

    hetwls fit         --config fit.json      --out DIR
    hetwls simulate    --config table1.json   --out DIR [--seed N] [--threads N]
    hetwls periodogram --config curves.json   --out DIR
    hetwls score       --config score.json    --out DIR [--seed N] [--threads N]

Exit codes: 0 success, 2 unreadable or invalid input/config, 3 estimation
failure (singular design, empty or degenerate group). Messages go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import io as hio
from .errors import EstimationError, HetWLSError, MissingColumn
from .estimators import (
    AdaptiveGrouped,
    AdaptiveKnown,
    FixedDelta,
    InverseVariance,
    estimate_A,
    estimate_B,
    fit,
    gamma_from_spec,
    nu_hat_1,
    strategy_from_name,
)
from .periodfit import (
    WEIGHTINGS,
    LightCurve,
    PeriodogramConfig,
    discrete_sigma_sampler,
    periodogram,
    recovery_table,
    synthetic_light_curve,
)
from .simulation import ESTIMATORS, run_monte_carlo

log = logging.getLogger("hetwls")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ESTIMATION = 3


def resolve_threads(value):
    """``--threads`` wins, then ``HETWLS_THREADS``; 0 means one per CPU."""
    if value is None:
        env = os.environ.get("HETWLS_THREADS", "").strip()
        value = int(env) if env else 1
    if value < 0:
        raise hio.ParseError("thread count must be non-negative")
    return value or (os.cpu_count() or 1)


def resolve_config(path):
    """A file path, or the name of a bundled config such as ``table1.json``."""
    p = Path(path)
    if p.exists():
        return p
    bundled = resources.files("hetwls").joinpath("configs", p.name)
    if bundled.is_file():
        return Path(str(bundled))
    raise hio.ParseError(f"config file {path} does not exist")


def _relative(base, value):
    p = Path(value)
    return p if p.is_absolute() else base / p


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def cmd_fit(args):
    cfg_path = resolve_config(args.config)
    cfg = hio.load_json(cfg_path)
    if "data" not in cfg:
        raise hio.ParseError(f"{cfg_path}: missing 'data' entry")
    try:
        strategy = strategy_from_name(
            cfg.get("strategy", "adaptive_known"),
            iterations=int(cfg.get("iterations", 2)),
            weights=cfg.get("weights"),
            delta=cfg.get("delta"),
        )
        gamma = gamma_from_spec(cfg.get("gamma"))
    except (TypeError, ValueError) as exc:
        raise hio.ParseError(f"{cfg_path}: {exc}") from exc
    estimator = cfg.get("variance_estimator", "nu2")
    if estimator not in ("nu1", "nu2"):
        raise hio.ParseError(f"{cfg_path}: variance_estimator must be 'nu1' or 'nu2'")

    needs_sigma = isinstance(strategy, (InverseVariance, AdaptiveKnown, FixedDelta)) or estimator == "nu1"
    data = hio.read_regression_csv(
        _relative(cfg_path.parent, cfg["data"]),
        require_sigma=needs_sigma,
        require_groups=isinstance(strategy, AdaptiveGrouped),
    )
    if hasattr(strategy, "w") and strategy.w.size != data.n:
        raise hio.ParseError(f"{cfg_path}: 'weights' has {strategy.w.size} entries, data has {data.n} rows")

    result = fit(data, strategy, gamma)
    if estimator == "nu1":
        B_hat = result.misspec.B_hat if result.misspec is not None else estimate_B(data)
        A_hat = estimate_A(data, result.beta, B_hat)
        cov = nu_hat_1(data, A_hat, B_hat, result.weights)
    else:
        cov = result.nu_hat

    rows = [["quantity", "index", "value"]]
    rows += [["beta", j, hio.format_float(b)] for j, b in enumerate(result.beta)]
    rows.append(["delta", "", "" if result.delta is None else hio.format_float(result.delta)])
    rows += [["weight", i, hio.format_float(w)] for i, w in enumerate(result.weights)]
    p = data.p
    cov_rows = [[f"b{j}" for j in range(p)]] + [[hio.format_float(v) for v in row] for row in cov]

    out = Path(args.out)
    hio.write_csv(out / "fit.csv", rows)
    hio.write_csv(out / "cov.csv", cov_rows)
    log.info("%s: beta = %s", strategy.name, np.array2string(result.beta, precision=6))
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    cfg_path = resolve_config(args.config)
    cfg = hio.load_json(cfg_path)
    config = hio.dgp_config_from_dict(cfg, seed=args.seed)
    iterations = int(cfg.get("iterations", 2))
    try:
        strategies = [
            strategy_from_name(s, iterations=iterations)
            for s in cfg.get("strategies", ["wls", "ols", "adaptive_known", "adaptive_grouped"])
        ]
        gamma = gamma_from_spec(cfg.get("gamma"))
    except ValueError as exc:
        raise hio.ParseError(f"{cfg_path}: {exc}") from exc
    estimators = tuple(cfg.get("estimators", ESTIMATORS))
    if set(estimators) - set(ESTIMATORS):
        raise hio.ParseError(f"{cfg_path}: estimators must be drawn from {ESTIMATORS}")
    level = float(cfg.get("level", 0.95))

    report = run_monte_carlo(
        config, strategies, estimators, gamma, level=level, threads=resolve_threads(args.threads)
    )
    out = Path(args.out)
    hio.write_csv(out / "replicates.csv", report.replicate_rows())
    hio.write_csv(out / "summary.csv", report.summary_rows())
    hio.write_csv(out / "ellipses.csv", report.ellipse_rows())
    for name, count in report.failures.items():
        if count:
            print(f"warning: {name}: {count} replicate(s) failed and were excluded", file=sys.stderr)
    log.info("simulation finished in %.1f s", report.runtime)
    return EXIT_OK


# ---------------------------------------------------------------------------
# periodogram / score
# ---------------------------------------------------------------------------


def _grid_options(cfg, cfg_path):
    grid = cfg.get("grid") or {}
    if "omega" in grid:
        return np.asarray(grid["omega"], dtype=float), {}
    allowed = {"period_min", "period_max", "oversample"}
    if set(grid) - allowed:
        raise hio.ParseError(f"{cfg_path}: grid accepts 'omega' or {sorted(allowed)}")
    return None, {k: float(v) for k, v in grid.items()}


def _weighting(name, cfg_path):
    if name not in WEIGHTINGS:
        raise hio.ParseError(f"{cfg_path}: weighting must be one of {WEIGHTINGS}")
    return name


def cmd_periodogram(args):
    cfg_path = resolve_config(args.config)
    cfg = hio.load_json(cfg_path)
    curves = cfg.get("curves")
    if not isinstance(curves, list):
        raise hio.ParseError(f"{cfg_path}: 'curves' must be a list of light-curve CSV paths")
    omega_grid, grid_opts = _grid_options(cfg, cfg_path)
    try:
        pcfg = PeriodogramConfig(
            K=int(cfg.get("K", 1)),
            omega_grid=omega_grid,
            weighting=_weighting(cfg.get("weighting", "identity"), cfg_path),
            gamma=gamma_from_spec(cfg.get("gamma")),
            **grid_opts,
        )
    except ValueError as exc:
        raise hio.ParseError(f"{cfg_path}: {exc}") from exc

    out = Path(args.out)
    summary = [["curve", "omega_hat", "period", "delta", "status"]]
    failed = 0
    for entry in curves:
        path = _relative(cfg_path.parent, entry)
        lc = hio.read_light_curve_csv(path)
        try:
            res = periodogram(lc, pcfg)
        except (EstimationError, ValueError) as exc:
            failed += 1
            log.warning("%s: skipped (%s)", path, exc)
            summary.append([str(entry), "", "", "", f"failed: {exc}"])
            continue
        rows = [["omega", "rss"]] + [
            [hio.format_float(o), hio.format_float(r)] for o, r in zip(res.omegas, res.rss_curve)
        ]
        hio.write_csv(out / f"{path.stem}_periodogram.csv", rows)
        summary.append(
            [
                str(entry),
                hio.format_float(res.omega_hat),
                hio.format_float(res.period),
                "" if res.delta is None else hio.format_float(res.delta),
                "ok",
            ]
        )
    hio.write_csv(out / "periods.csv", summary)
    if failed:
        print(f"warning: {failed} curve(s) failed and were skipped", file=sys.stderr)
    return EXIT_OK


def synthetic_catalog(spec, seed):
    """Curves and true periods for a synthetic catalog description."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CA7]))
    count = int(spec.get("count", 100))
    lo, hi = spec.get("period_range", (0.4, 0.8))
    law = spec.get("sigma_law")
    if law is not None:
        sigma = discrete_sigma_sampler(law["values"], law["probs"])
    else:
        sigma = float(spec.get("sigma", 0.05))
    periods = rng.uniform(float(lo), float(hi), size=count)
    curves = [
        synthetic_light_curve(
            P,
            int(spec.get("n_obs", 60)),
            rng,
            shape=spec.get("shape", "sawtooth"),
            amplitude=float(spec.get("amplitude", 5.0)),
            sigma=sigma,
            time_span=float(spec.get("time_span", 100.0)),
            cadence=spec.get("cadence", "nightly"),
        )
        for P in periods
    ]
    return curves, periods


def cmd_score(args):
    cfg_path = resolve_config(args.config)
    cfg = hio.load_json(cfg_path)
    seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))

    if "manifest" in cfg:
        paths, periods = hio.read_manifest(_relative(cfg_path.parent, cfg["manifest"]))
        curves, truths = [], []
        for path, P in zip(paths, periods):
            try:
                curves.append(hio.read_light_curve_csv(path))
                truths.append(P)
            except HetWLSError as exc:
                log.warning("%s: skipped (%s)", path, exc)
                print(f"warning: {path}: skipped ({exc})", file=sys.stderr)
        truths = np.asarray(truths, dtype=float)
    elif "synthetic" in cfg:
        try:
            curves, truths = synthetic_catalog(cfg["synthetic"], seed)
        except (KeyError, TypeError, ValueError) as exc:
            raise hio.ParseError(f"{cfg_path}: invalid synthetic catalog ({exc})") from exc
    else:
        raise hio.ParseError(f"{cfg_path}: need either 'manifest' or 'synthetic'")

    n_values = [int(v) for v in cfg.get("n_values", [10, 20, 30, 40])]
    K_values = [int(v) for v in cfg.get("K_values", [1, 2, 3])]
    weightings = [_weighting(w, cfg_path) for w in cfg.get("weightings", list(WEIGHTINGS))]
    omega_grid, grid_opts = _grid_options(cfg, cfg_path)
    if not curves:
        print("warning: catalog is empty; writing an empty results table", file=sys.stderr)

    table = recovery_table(
        curves,
        truths,
        n_values=n_values,
        K_values=K_values,
        weightings=weightings,
        omega_grid=omega_grid,
        seed=seed,
        tol=float(cfg.get("tol", 0.01)),
        threads=resolve_threads(args.threads),
        grid_options=grid_opts,
    )
    header = ["n"] + [f"K{K}_{w}" for K in K_values for w in weightings] + ["count"]
    rows = [header]
    if curves:
        for n in n_values:
            row = [n] + [f"{table[(n, K, w)].fraction:.4f}" for K in K_values for w in weightings]
            row.append(len(curves))
            rows.append(row)
    hio.write_csv(Path(args.out) / "results.csv", rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "periodogram": cmd_periodogram,
    "score": cmd_score,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hetwls",
        description="Weighted least squares for misspecified models with heteroskedastic errors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", required=True, help="output directory (created if needed)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads, 0 = auto")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (HetWLSError, MissingColumn, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
