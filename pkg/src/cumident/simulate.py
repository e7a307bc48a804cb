"""Composite-error data generator, IV benchmarks, and the Monte Carlo
experiments (MSE, confidence-interval coverage, test size/power).

Common random numbers: every replication owns seed-derived substreams, one
per underlying random source, so replication `rep` reuses the same draws
across every (n, k) grid cell and the first n1 draws at n1 < n2 are a prefix
of the n2 draws.  The noise scale k never touches a random stream; it only
rescales draws deterministically.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _pipeline
from .errors import CumidentError, WeakInstrumentError
from .identify import ProbeVectors, estimate_demixing, label_by_signs
from .moments import monomial_matrix
from .overid import wald_test

LAMBDA_TRUE = np.array([[1.0, 1.5], [-0.5, 1.0]])
GAMMA_LOADINGS = np.array([[0.5, -1.0, 1.5], [-1.0, 1.0, -1.0]])
MEAS_COV = np.array([[1.0, -0.45], [-0.45, 0.25]])
SUPPLY_DEMAND_PATTERN = np.array([[1, 1], [-1, 1]])
B1_TRUE = 1.5


def worker_count() -> int:
    """Replication workers, capped by the CUMIDENT_THREADS variable."""
    env = os.environ.get("CUMIDENT_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return 1


@dataclass(frozen=True, eq=False)
class CompositeDgpConfig:
    """Two-equation composite-error design: skewed shifters plus symmetric
    omitted shocks plus correlated measurement error, scaled by k."""

    n: int
    k: float
    kurtoses: tuple[float, float, float] = (3.0, 4.0, 5.0)
    seed: int = 0
    lambda_true: np.ndarray = field(default_factory=lambda: LAMBDA_TRUE.copy())
    gamma_loadings: np.ndarray = field(
        default_factory=lambda: GAMMA_LOADINGS.copy()
    )
    meas_cov: np.ndarray = field(default_factory=lambda: MEAS_COV.copy())

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.k < 0:
            raise ValueError(f"noise scale k must be >= 0, got {self.k}")
        if len(self.kurtoses) != self.gamma_loadings.shape[1]:
            raise ValueError("one kurtosis per omitted-shock column required")
        if any(kappa < 3.0 for kappa in self.kurtoses):
            raise ValueError("kurtoses below 3 are outside the symmetric family")


@dataclass
class CompositeDraw:
    """One replication: observables plus the latent draws the IVs need."""

    x: np.ndarray
    s: np.ndarray
    z: np.ndarray


def pearson_symmetric(kurtosis: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-variance, symmetric draws with the given kurtosis.

    kurtosis = 3 is the standard normal; above 3, a Student-t scaled to
    unit variance with df = 6/(kurtosis - 3) + 4 (so its excess kurtosis is
    exactly kurtosis - 3).
    """
    if kurtosis < 3.0:
        raise ValueError(
            f"kurtosis must be >= 3 (platykurtic family not implemented), "
            f"got {kurtosis}"
        )
    if kurtosis == 3.0:
        return rng.standard_normal(n)
    df = 6.0 / (kurtosis - 3.0) + 4.0
    return rng.standard_t(df, n) * np.sqrt((df - 2.0) / df)


def _stream(cfg: CompositeDgpConfig, rep: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, rep, tag])


def _draw_primitives(cfg: CompositeDgpConfig, rep: int, n: int):
    """The k-independent random inputs of one replication."""
    s = np.column_stack([
        _stream(cfg, rep, 0).standard_exponential(n),
        _stream(cfg, rep, 1).standard_exponential(n),
    ])
    e = np.column_stack([
        pearson_symmetric(kappa, n, _stream(cfg, rep, 2 + j))
        for j, kappa in enumerate(cfg.kurtoses)
    ])
    eps = _stream(cfg, rep, 5).standard_normal((n, 2)) @ np.linalg.cholesky(
        cfg.meas_cov
    ).T
    z = _stream(cfg, rep, 6).standard_normal(n)
    return s, e, eps, z


def _assemble(cfg: CompositeDgpConfig, s, e, eps, k: float) -> np.ndarray:
    rhs = s + np.sqrt(k / 3.0) * e @ cfg.gamma_loadings.T
    x_star = np.linalg.solve(cfg.lambda_true, rhs.T).T
    return x_star + np.sqrt(k) * eps


def gen_composite(cfg: CompositeDgpConfig, rep: int) -> CompositeDraw:
    """Generate one replication of the composite-error design.

    Gamma(1,1) shifters are drawn as standard exponentials (the same law).
    At k = 0 the structural errors are exactly the independent shifters.
    """
    s, e, eps, z = _draw_primitives(cfg, rep, cfg.n)
    return CompositeDraw(x=_assemble(cfg, s, e, eps, cfg.k), s=s, z=z)


def iv_2sls(y, x, z) -> float:
    """Just-identified 2SLS slope (z'y)/(z'x) on demeaned inputs."""
    y = np.asarray(y, dtype=float) - np.mean(y)
    x = np.asarray(x, dtype=float) - np.mean(x)
    z = np.asarray(z, dtype=float) - np.mean(z)
    denom = z @ x
    if abs(denom) <= 1e-10 * np.linalg.norm(z) * np.linalg.norm(x):
        raise WeakInstrumentError(
            f"instrument-regressor inner product {denom:.3e} is numerically zero"
        )
    return float(z @ y / denom)


def _eigen_b1(x: np.ndarray, probes: ProbeVectors) -> float:
    est = estimate_demixing(x, probes)
    lab = label_by_signs(est, SUPPLY_DEMAND_PATTERN, on_tie="error")
    return float(lab.lambda_final[0, 1])


def _iv1_b1(draw_x: np.ndarray, s: np.ndarray, z: np.ndarray) -> float:
    return -iv_2sls(draw_x[:, 0], draw_x[:, 1], s[:, 1])


def _iv2_b1(draw_x: np.ndarray, s: np.ndarray, z: np.ndarray) -> float:
    diluted = np.sqrt(0.3) * s[:, 1] + np.sqrt(0.7) * z
    return -iv_2sls(draw_x[:, 0], draw_x[:, 1], diluted)


_ESTIMATORS = {"eigen": None, "iv1": _iv1_b1, "iv2": _iv2_b1}


@dataclass
class McResult:
    """Per-cell Monte Carlo summaries on an (n, k) grid."""

    kind: str
    ns: tuple[int, ...]
    ks: tuple[float, ...]
    series: tuple[str, ...]
    values: np.ndarray
    failures: np.ndarray
    replications: int
    seed: int


def _map_reps(fn, reps: int):
    workers = worker_count()
    indices = range(reps)
    if workers == 1:
        return [fn(rep) for rep in indices]
    chunk = max(1, reps // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, indices, chunksize=chunk))


def _check_failure_cap(failures: np.ndarray, reps: int, what: str) -> None:
    worst = failures.max()
    if worst / reps >= 0.01:
        raise RuntimeError(
            f"{what}: {int(worst)} of {reps} replications failed in some "
            "cell (cap is 1%); results would be silently selective"
        )


class _MseRep:
    """Picklable per-replication worker for the MSE experiment."""

    def __init__(self, cfg, ns, ks, estimators, probes):
        self.cfg = cfg
        self.ns = ns
        self.ks = ks
        self.estimators = estimators
        self.probes = probes

    def __call__(self, rep: int):
        n_max = max(self.ns)
        s, e, eps, z = _draw_primitives(self.cfg, rep, n_max)
        out = np.full((len(self.ns), len(self.ks), len(self.estimators)), np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for a, n in enumerate(self.ns):
                for b, k in enumerate(self.ks):
                    x = _assemble(self.cfg, s[:n], e[:n], eps[:n], k)
                    for c, name in enumerate(self.estimators):
                        try:
                            if name == "eigen":
                                b1 = _eigen_b1(x, self.probes)
                            else:
                                b1 = _ESTIMATORS[name](x, s[:n], z[:n])
                        except (CumidentError, ValueError):
                            continue
                        out[a, b, c] = (b1 - B1_TRUE) ** 2
        return out


def run_mse_experiment(ns, ks, reps: int, seed: int,
                       estimators=("eigen", "iv1", "iv2"),
                       kurtoses=(3.0, 4.0, 5.0)) -> McResult:
    """Squared-error study for the slope b1 = 1.5 on an (n, k) grid.

    Replications that fail (singular contraction, labeling tie, weak
    instrument) are excluded and counted, with a hard 1% cap per cell.
    Meaningful mean squared errors call for a few hundred replications at
    least; a single replication returns the one squared error.
    """
    ns, ks = tuple(int(n) for n in ns), tuple(float(k) for k in ks)
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    if not estimators:
        raise ValueError("estimator list is empty")
    unknown = [e for e in estimators if e not in _ESTIMATORS]
    if unknown:
        raise ValueError(f"unknown estimators {unknown}; pick from {sorted(_ESTIMATORS)}")
    cfg = CompositeDgpConfig(n=max(ns), k=0.0, kurtoses=tuple(kurtoses), seed=seed)
    probes = ProbeVectors.draw(2, seed)
    worker = _MseRep(cfg, ns, ks, tuple(estimators), probes)
    per_rep = np.stack(_map_reps(worker, reps))
    failures = np.isnan(per_rep).sum(axis=0)
    _check_failure_cap(failures, reps, "MSE experiment")
    values = np.nanmean(per_rep, axis=0)
    return McResult(
        kind="mse",
        ns=ns,
        ks=ks,
        series=tuple(estimators),
        values=values,
        failures=failures,
        replications=reps,
        seed=seed,
    )


class _CoverageRep:
    """Picklable per-replication worker for CI coverage at a fixed k."""

    def __init__(self, cfg, ns, k, level, methods, probes):
        self.cfg = cfg
        self.ns = ns
        self.k = k
        self.level = level
        self.methods = methods
        self.probes = probes

    def __call__(self, rep: int):
        n_max = max(self.ns)
        s, e, eps, _ = _draw_primitives(self.cfg, rep, n_max)
        zcrit = stats.norm.ppf((1.0 + self.level) / 2.0)
        w1, w2 = self.probes.w1, self.probes.w2
        out = np.full((len(self.ns), len(self.methods)), np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for a, n in enumerate(self.ns):
                x = _assemble(self.cfg, s[:n], e[:n], eps[:n], self.k)
                z = monomial_matrix(x)
                m_hat = z.mean(axis=0)
                try:
                    point, diag = _pipeline.labeled_entry(
                        m_hat, 2, w1, w2, SUPPLY_DEMAND_PATTERN, (0, 1)
                    )
                except (CumidentError, ValueError):
                    continue
                if diag["tie_flags"]:
                    continue
                for c, method in enumerate(self.methods):
                    try:
                        if method == "delta":
                            zc = z - m_hat
                            sigma_m = zc.T @ zc / n
                            jac = _pipeline.batched_jacobian(
                                lambda ms: _pipeline.labeled_entry(
                                    ms, 2, w1, w2, SUPPLY_DEMAND_PATTERN, (0, 1)
                                )[0],
                                m_hat,
                                np.cbrt(np.finfo(float).eps)
                                * np.maximum(1.0, np.abs(m_hat)),
                            )
                            half = zcrit * np.sqrt(
                                float(jac @ sigma_m @ jac.T) / n
                            )
                        else:
                            loo = _pipeline.leave_one_out_moments(z)
                            vals, _ = _pipeline.labeled_entry(
                                loo, 2, w1, w2, SUPPLY_DEMAND_PATTERN, (0, 1)
                            )
                            dev = vals - vals.mean()
                            half = zcrit * np.sqrt((n - 1) / n * np.sum(dev**2))
                    except (CumidentError, ValueError):
                        continue
                    out[a, c] = float(
                        point - half <= B1_TRUE <= point + half
                    )
        return out


def run_coverage_experiment(ns, k: float, reps: int, seed: int,
                            level: float = 0.95,
                            methods=("jackknife", "delta"),
                            kurtoses=(3.0, 4.0, 5.0)) -> McResult:
    """Empirical coverage of normal CIs for b1, per method and sample size.

    Both methods track the full pipeline statistic including labeling; the
    jackknife re-labels every resample.  `level` may be 1.0, in which case
    every interval is infinite and coverage is trivially one.
    """
    ns = tuple(int(n) for n in ns)
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    if not 0.0 < level <= 1.0:
        raise ValueError(f"level must be in (0, 1], got {level}")
    bad = [m for m in methods if m not in ("delta", "jackknife")]
    if bad:
        raise ValueError(f"unknown methods {bad}")
    cfg = CompositeDgpConfig(n=max(ns), k=float(k), kurtoses=tuple(kurtoses), seed=seed)
    probes = ProbeVectors.draw(2, seed)
    worker = _CoverageRep(cfg, ns, float(k), level, tuple(methods), probes)
    per_rep = np.stack(_map_reps(worker, reps))
    failures = np.isnan(per_rep).sum(axis=0)
    _check_failure_cap(failures, reps, "coverage experiment")
    values = np.nanmean(per_rep, axis=0)
    return McResult(
        kind="coverage",
        ns=ns,
        ks=(float(k),),
        series=tuple(methods),
        values=values[:, None, :],
        failures=failures[:, None, :],
        replications=reps,
        seed=seed,
    )


class _PowerRep:
    """Picklable per-replication worker for the test rejection grid."""

    def __init__(self, cfg, ns, ks, alpha, probes, method):
        self.cfg = cfg
        self.ns = ns
        self.ks = ks
        self.alpha = alpha
        self.probes = probes
        self.method = method

    def __call__(self, rep: int):
        n_max = max(self.ns)
        s, e, eps, _ = _draw_primitives(self.cfg, rep, n_max)
        out = np.full((len(self.ns), len(self.ks)), np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for a, n in enumerate(self.ns):
                for b, k in enumerate(self.ks):
                    x = _assemble(self.cfg, s[:n], e[:n], eps[:n], k)
                    try:
                        res = wald_test(x, self.probes, method=self.method)
                    except (CumidentError, ValueError):
                        continue
                    out[a, b] = float(res.p_value < self.alpha)
        return out


def run_overid_power_experiment(ns, ks, reps: int, seed: int,
                                alpha: float = 0.05, method: str = "delta",
                                kurtoses=(3.0, 4.0, 5.0)) -> McResult:
    """Rejection rates of the joint-diagonality test on an (n, k) grid.

    A single probe direction w1 is drawn once for the whole experiment
    (w2 stays at the all-ones anchor); k = 0 cells measure size, k > 0
    cells measure power against correlated composite errors.
    """
    ns, ks = tuple(int(n) for n in ns), tuple(float(k) for k in ks)
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    cfg = CompositeDgpConfig(n=max(ns), k=0.0, kurtoses=tuple(kurtoses), seed=seed)
    probes = ProbeVectors.draw(2, seed)
    worker = _PowerRep(cfg, ns, ks, alpha, probes, method)
    per_rep = np.stack(_map_reps(worker, reps))
    failures = np.isnan(per_rep).sum(axis=0)
    _check_failure_cap(failures, reps, "size/power experiment")
    values = np.nanmean(per_rep, axis=0)
    return McResult(
        kind="rejection",
        ns=ns,
        ks=ks,
        series=("wald",),
        values=values[:, :, None],
        failures=failures[:, :, None],
        replications=reps,
        seed=seed,
    )


def load_experiment_config(path) -> dict:
    """Parse the plain key-value experiment config format.

    One `key = value` pair per line; `#` starts a comment; list values are
    comma separated.  Recognized keys: table, ns, ks, k, reps, seed, alpha,
    level, kurtoses, estimators, methods.  All values are returned as
    strings or lists of strings; the caller owns the type conversions.
    """
    known = {
        "table", "ns", "ks", "k", "reps", "seed", "alpha", "level",
        "kurtoses", "estimators", "methods",
    }
    out: dict = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {ln}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ValueError(f"{path}: line {ln}: unknown key {key!r}")
            items = [v.strip() for v in value.split(",") if v.strip()]
            if not items:
                raise ValueError(f"{path}: line {ln}: empty value for {key!r}")
            out[key] = items if len(items) > 1 else items[0]
    return out


def write_mc_csv(result: McResult, path, extra_header=()) -> None:
    """Emit an McResult as a CSV table in the matching report layout.

    MSE tables list one row per (n, k) cell with one column per estimator;
    coverage tables one row per method with one column per n; rejection
    tables one row per n with one column per k.  Header comment lines carry
    the seed, replication count and library versions; no timestamps, so
    identical runs produce identical bytes.
    """
    import scipy

    lines = [
        "# cumident 0.1.0",
        f"# numpy {np.__version__} scipy {scipy.__version__}",
        f"# kind: {result.kind}",
        f"# seed: {result.seed}",
        f"# replications: {result.replications}",
        f"# failures-total: {int(result.failures.sum())}",
    ]
    lines.extend(f"# {extra}" for extra in extra_header)
    if result.kind == "mse":
        lines.append(",".join(["n", "k", *result.series]))
        for a, n in enumerate(result.ns):
            for b, k in enumerate(result.ks):
                cells = ["%.10g" % v for v in result.values[a, b]]
                lines.append(f"{n},{k:g}," + ",".join(cells))
    elif result.kind == "coverage":
        lines.append(",".join(["method", *[f"n={n}" for n in result.ns]]))
        for c, name in enumerate(result.series):
            cells = ["%.10g" % result.values[a, 0, c] for a in range(len(result.ns))]
            lines.append(name + "," + ",".join(cells))
    elif result.kind == "rejection":
        lines.append(",".join(["n", *[f"k={k:g}" for k in result.ks]]))
        for a, n in enumerate(result.ns):
            cells = ["%.10g" % result.values[a, b, 0] for b in range(len(result.ks))]
            lines.append(str(n) + "," + ",".join(cells))
    else:
        raise ValueError(f"unknown result kind {result.kind!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
