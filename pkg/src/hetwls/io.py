"""CSV and JSON input/output.

All files are UTF-8, comma-delimited, with a mandatory header row. Output is
written to a temporary file in the destination directory and renamed into
place, so a failed run never leaves a partially written file.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import HetWLSError, MissingColumn
from .estimators import RegressionData
from .periodfit import LightCurve
from .simulation import (
    CustomTable,
    DgpConfig,
    DiscreteSigma,
    Linear,
    Quadratic,
    StepOfX,
)


class ParseError(HetWLSError, ValueError):
    """A data or configuration file could not be parsed."""


def _read_table(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise ParseError(f"{path}: file is empty (a header row is required)") from None
            rows = [r for r in reader if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    if len(set(header)) != len(header):
        raise ParseError(f"{path}: duplicate column names in header")
    for i, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ParseError(f"{path}: line {i} has {len(r)} fields, expected {len(header)}")
    return header, rows


def _column(path, header, rows, name, parse=float):
    j = header.index(name)
    out = []
    for i, r in enumerate(rows, start=2):
        try:
            out.append(parse(r[j].strip()))
        except ValueError:
            raise ParseError(f"{path}: line {i}, column '{name}': cannot parse {r[j]!r}") from None
    return np.array(out)


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(text)
    return int(v)


def read_regression_csv(path, require_sigma=False, require_groups=False):
    """Load ``y,sigma,group,x1..xp``.

    ``sigma`` and ``group`` are optional unless required by the caller; the
    design columns ``x1, x2, ...`` must be consecutive from ``x1``.
    """
    header, rows = _read_table(path)
    if "y" not in header:
        raise MissingColumn("y", f"{path}: required column 'y' is missing")
    xcols = []
    while f"x{len(xcols) + 1}" in header:
        xcols.append(f"x{len(xcols) + 1}")
    if not xcols:
        raise MissingColumn("x1", f"{path}: at least one design column 'x1' is required")
    extra = set(header) - {"y", "sigma", "group", *xcols}
    if extra:
        raise ParseError(f"{path}: unexpected columns {sorted(extra)}")
    if require_sigma and "sigma" not in header:
        raise MissingColumn("sigma", f"{path}: column 'sigma' is required by this strategy")
    if require_groups and "group" not in header:
        raise MissingColumn("group", f"{path}: column 'group' is required by this strategy")
    if not rows:
        raise ParseError(f"{path}: no data rows")

    X = np.column_stack([_column(path, header, rows, c) for c in xcols])
    y = _column(path, header, rows, "y")
    sigma = _column(path, header, rows, "sigma") if "sigma" in header else None
    groups = _column(path, header, rows, "group", _int) if "group" in header else None
    try:
        return RegressionData(X, y, sigma, groups)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def read_light_curve_csv(path):
    """Load ``t,mag,err``."""
    header, rows = _read_table(path)
    for c in ("t", "mag", "err"):
        if c not in header:
            raise MissingColumn(c, f"{path}: required column '{c}' is missing")
    try:
        return LightCurve(
            _column(path, header, rows, "t"),
            _column(path, header, rows, "mag"),
            _column(path, header, rows, "err"),
        )
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"{path}: {exc}") from exc


def read_manifest(path):
    """Load ``path,true_period``; relative paths resolve against the manifest."""
    header, rows = _read_table(path)
    for c in ("path", "true_period"):
        if c not in header:
            raise MissingColumn(c, f"{path}: required column '{c}' is missing")
    base = Path(path).parent
    paths = [base / r[header.index("path")].strip() for r in rows]
    periods = _column(path, header, rows, "true_period")
    if np.any(~(periods > 0)):
        raise ParseError(f"{path}: true_period must be positive")
    return paths, periods


def rows_to_text(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def write_text_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, rows):
    write_text_atomic(path, rows_to_text(rows))


def format_float(v):
    return "nan" if not np.isfinite(v) else repr(float(v))


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------


def load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    return cfg


def regression_fn_from_dict(spec):
    spec = spec or {"type": "quadratic"}
    kind = spec.get("type", "quadratic")
    if kind == "quadratic":
        return Quadratic()
    if kind == "linear":
        return Linear(tuple(spec.get("beta", (0.0, 1.0))))
    if kind == "custom":
        return CustomTable(tuple(spec["x"]), tuple(spec["f"]))
    raise ParseError(f"unknown regression_fn type {kind!r}")


def sigma_law_from_dict(spec):
    if spec is None:
        return DiscreteSigma((0.01, 0.1, 1.0), (0.05, 0.9, 0.05))
    kind = spec.get("type", "discrete")
    if kind == "discrete":
        return DiscreteSigma(tuple(spec["values"]), tuple(spec["probs"]))
    if kind == "step":
        return StepOfX(tuple(spec["thresholds"]), tuple(spec["values"]))
    raise ParseError(f"unknown sigma_law type {kind!r}")


def dgp_config_from_dict(cfg, seed=None):
    """Build a :class:`DgpConfig`; ``seed`` overrides the file's value."""
    try:
        return DgpConfig(
            regression_fn=regression_fn_from_dict(cfg.get("regression_fn")),
            sigma_law=sigma_law_from_dict(cfg.get("sigma_law")),
            n=int(cfg.get("n", 100)),
            replicates=int(cfg.get("replicates", 1000)),
            seed=int(seed if seed is not None else cfg.get("seed", 20160301)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid simulation config: {exc!r}") from exc
