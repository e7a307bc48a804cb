"""VAR(p) estimation, partialling-out of covariates, and pairwise
joint-diagonality tests on residual subsystems."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import CumidentError
from .identify import ProbeVectors
from .moments import validate_sample
from .overid import TestResult, wald_test


@dataclass
class VarFit:
    """Equation-by-equation OLS fit of a VAR(p)."""

    coefficients: list[np.ndarray]
    residuals: np.ndarray
    lag: int
    intercept: np.ndarray | None


@dataclass
class PairwiseReport:
    """Joint-diagonality test results for 2-column residual subsystems."""

    pairs: list[tuple[int, int, TestResult]]
    failures: list[tuple[int, int, str]]
    lag: int
    n_effective: int
    alpha: float

    def rejected(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j, res in self.pairs if res.p_value < self.alpha]


def fit_var(series, p: int, intercept: bool = True) -> VarFit:
    """Least-squares VAR(p) fit, one equation at a time.

    Regressors are the p lagged vectors (plus an intercept by default);
    residuals are returned for the T - p usable periods.
    """
    y = validate_sample(series, min_cols=1)
    t, d = y.shape
    if p < 1:
        raise ValueError(f"lag order must be >= 1, got {p}")
    if t <= d * p + d + 1:
        raise ValueError(
            f"series too short for VAR({p}) in d={d}: need T > {d * p + d + 1}"
        )
    blocks = [y[p - lag - 1: t - lag - 1] for lag in range(p)]
    w = np.hstack(blocks)
    if intercept:
        w = np.hstack([np.ones((t - p, 1)), w])
    target = y[p:]
    beta, _, rank, _ = np.linalg.lstsq(w, target, rcond=None)
    if rank < w.shape[1]:
        raise ValueError(
            f"rank-deficient lag regressor matrix (rank {rank} < {w.shape[1]})"
        )
    residuals = target - w @ beta
    offset = 1 if intercept else 0
    coefficients = [
        beta[offset + lag * d: offset + (lag + 1) * d, :].T for lag in range(p)
    ]
    return VarFit(
        coefficients=coefficients,
        residuals=residuals,
        lag=p,
        intercept=beta[0] if intercept else None,
    )


def partial_out(targets, controls) -> np.ndarray:
    """Residuals of each target column on the controls plus an intercept."""
    y = validate_sample(targets, min_cols=1)
    c = validate_sample(controls, min_cols=1)
    if y.shape[0] != c.shape[0]:
        raise ValueError(
            f"targets and controls disagree on rows: {y.shape[0]} vs {c.shape[0]}"
        )
    w = np.hstack([np.ones((c.shape[0], 1)), c])
    beta, _, rank, _ = np.linalg.lstsq(w, y, rcond=None)
    if rank < w.shape[1]:
        raise ValueError(
            f"controls are rank deficient (rank {rank} < {w.shape[1]})"
        )
    return y - w @ beta


def pairwise_overid(fit: VarFit, probes: ProbeVectors, pairs="all",
                    alpha: float = 0.05, method: str = "delta") -> PairwiseReport:
    """Run the joint-diagonality Wald test on residual pairs.

    Estimated residuals stand in for the true errors without correction;
    the replacement error is below the sampling noise of the statistic for
    a stable, correctly specified lag order.  A failing pair is reported
    and does not stop the others.
    """
    d = fit.residuals.shape[1]
    if pairs == "all":
        wanted = list(itertools.combinations(range(d), 2))
    else:
        wanted = [(int(i), int(j)) for i, j in pairs]
        for i, j in wanted:
            if not (0 <= i < d and 0 <= j < d and i != j):
                raise ValueError(f"invalid pair ({i}, {j}) for d={d}")
    results, failures = [], []
    for i, j in wanted:
        sub = fit.residuals[:, [i, j]]
        try:
            results.append((i, j, wald_test(sub, probes, method=method)))
        except (CumidentError, ValueError) as exc:
            failures.append((i, j, str(exc)))
    return PairwiseReport(
        pairs=results,
        failures=failures,
        lag=fit.lag,
        n_effective=fit.residuals.shape[0],
        alpha=alpha,
    )


@dataclass
class CsvSeries:
    """Numeric columns from a headed CSV, with an optional date column."""

    names: list[str]
    data: np.ndarray
    dates: list[str] | None = None
    date_column: str | None = None


def load_series_csv(path, date_column: str | None = None) -> CsvSeries:
    """Read a headed CSV of series columns; missing values are rejected.

    If `date_column` is None, a single non-numeric column (if any) is
    detected and preserved as dates; it never enters the numeric data.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        rows = [row for row in reader if row]
    header = [h.strip() for h in header]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(header)
    for ln, row in enumerate(rows, start=2):
        if len(row) != width:
            raise ValueError(f"{path}: line {ln} has {len(row)} fields, expected {width}")

    columns = list(zip(*rows))

    def parse(col):
        out = []
        for v in col:
            v = v.strip()
            if v == "" or v.lower() in ("na", "nan"):
                raise ValueError("missing value")
            out.append(float(v))
        return out

    if date_column is not None:
        if date_column not in header:
            raise ValueError(f"{path}: no column named {date_column!r}")
        date_idx = header.index(date_column)
    else:
        date_idx = None
        for idx, col in enumerate(columns):
            try:
                parse(col)
            except ValueError as exc:
                if "missing value" in str(exc):
                    raise ValueError(
                        f"{path}: column {header[idx]!r} has missing values"
                    ) from None
                if date_idx is not None:
                    raise ValueError(
                        f"{path}: multiple non-numeric columns "
                        f"({header[date_idx]!r}, {header[idx]!r})"
                    ) from None
                date_idx = idx

    names, numeric = [], []
    for idx, col in enumerate(columns):
        if idx == date_idx:
            continue
        try:
            numeric.append(parse(col))
        except ValueError:
            raise ValueError(
                f"{path}: column {header[idx]!r} is not numeric or has "
                "missing values"
            ) from None
        names.append(header[idx])
    data = np.array(numeric, dtype=float).T
    if not np.isfinite(data).all():
        raise ValueError(f"{path}: non-finite values present")
    dates = list(columns[date_idx]) if date_idx is not None else None
    return CsvSeries(
        names=names,
        data=data,
        dates=dates,
        date_column=header[date_idx] if date_idx is not None else None,
    )
