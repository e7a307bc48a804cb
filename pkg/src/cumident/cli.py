"""Command-line front door: estimation, testing, simulation and VAR workflows.

Exit codes: 0 success, 2 input/usage problems (argument parsing, CSV or
config parsing, dimension preconditions), 3 numerical failures
(singularities, weak instruments), 4 labeling ambiguity.  Seeds are
mandatory wherever randomness enters (the probe draw, the simulations);
given the same inputs and seed, all numeric outputs are byte-identical.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, _pipeline
from .errors import CumidentError, LabelingAmbiguityError
from .identify import (
    ProbeVectors,
    estimate_demixing,
    label_by_signs,
    label_by_triangular,
)
from .inference import (
    confidence_interval,
    delta_variance_statistic,
    demixing_jackknife,
    jackknife_confidence_interval,
)
from .moments import monomial_matrix
from .overid import wald_test
from .simulate import (
    CompositeDgpConfig,
    gen_composite,
    load_experiment_config,
    run_coverage_experiment,
    run_mse_experiment,
    run_overid_power_experiment,
    write_mc_csv,
)
from .varpipe import fit_var, load_series_csv, pairwise_overid, partial_out

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NUMERIC = 3
EXIT_LABELING = 4


class _InputError(Exception):
    """Input-side failure (file access, CSV/config parsing, dimensions)."""


@dataclass
class RunManifest:
    """Provenance attached to every output of a CLI run."""

    command: str
    seed: int
    version: str
    created_utc: str
    inputs: dict[str, str]
    argv: list[str]

    @classmethod
    def build(cls, command: str, seed: int, input_paths, argv) -> "RunManifest":
        digests = {}
        for p in input_paths:
            h = hashlib.sha256()
            h.update(Path(p).read_bytes())
            digests[str(p)] = h.hexdigest()
        return cls(
            command=command,
            seed=seed,
            version=__version__,
            created_utc=datetime.datetime.now(datetime.timezone.utc).isoformat(),
            inputs=digests,
            argv=list(argv),
        )

    def header_lines(self) -> list[str]:
        """Deterministic manifest subset embedded in every numeric output."""
        lines = [
            f"cumident {self.version}",
            f"command: {self.command}",
            f"seed: {self.seed}",
            "manifest: run_manifest.json",
        ]
        lines += [f"input {p} sha256:{h}" for p, h in sorted(self.inputs.items())]
        return lines

    def write(self, out_dir: Path) -> None:
        payload = {
            "command": self.command,
            "seed": self.seed,
            "version": self.version,
            "created_utc": self.created_utc,
            "inputs": self.inputs,
            "argv": self.argv,
        }
        (out_dir / "run_manifest.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n"
        )


def _write_csv(path: Path, manifest: RunManifest, header: list[str],
               rows: list[list]) -> None:
    lines = [f"# {line}" for line in manifest.header_lines()]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "%.12g" % v
    return str(v)


def _load_csv(path):
    try:
        return load_series_csv(path)
    except (OSError, ValueError) as exc:
        raise _InputError(str(exc)) from exc


def _load_vector(path, d: int) -> np.ndarray:
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=1, comments="#")
    except (OSError, ValueError) as exc:
        raise _InputError(f"{path}: {exc}") from exc
    values = np.asarray(values, dtype=float).ravel()
    if values.size != d:
        raise _InputError(f"{path}: expected {d} entries, got {values.size}")
    return values


def _load_pattern(path, d: int) -> np.ndarray:
    try:
        pattern = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    except (OSError, ValueError) as exc:
        raise _InputError(f"{path}: {exc}") from exc
    if pattern.shape != (d, d):
        raise _InputError(f"{path}: expected a {d}x{d} sign pattern, got {pattern.shape}")
    return pattern.astype(int)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- estimate

def _cmd_estimate(args, argv) -> int:
    series = _load_csv(args.csv)
    n, d = series.data.shape
    if d < 2:
        raise _InputError(f"estimation needs at least 2 series, found {d}")
    w2 = None if args.w2 == "ones" else _load_vector(args.w2, d)
    pattern = None
    if args.label.startswith("signs:"):
        pattern = _load_pattern(args.label.split(":", 1)[1], d)
    elif args.label not in ("triangular", "none"):
        raise _InputError(
            f"--label must be signs:<file>, triangular or none, got {args.label!r}"
        )

    manifest = RunManifest.build("estimate", args.seed, [args.csv], argv)
    out = _out_dir(args)
    probes = ProbeVectors.draw(d, args.seed, w2=w2)

    est = estimate_demixing(series.data, probes, order=args.order)

    labeling = None
    if pattern is not None:
        try:
            labeling = label_by_signs(est, pattern)
        except (LabelingAmbiguityError, ValueError) as exc:
            print(f"cumident estimate: labeling failed: {exc}", file=sys.stderr)
            return EXIT_LABELING
    elif args.label == "triangular":
        labeling = label_by_triangular(est)

    reported = labeling.lambda_final if labeling is not None else est.lambda_tilde

    rows = [
        [i] + [float(v) for v in reported[i]] for i in range(d)
    ]
    _write_csv(
        out / "estimate_matrix.csv", manifest,
        ["row", *series.names], rows,
    )

    diag_rows = [
        ["eigenvalue_" + str(i), float(est.eigenvalues[i])] for i in range(d)
    ]
    diag_rows += [
        ["cond_G2", est.cond_G2],
        ["max_imag", est.max_imag],
        ["orientation_rule", est.orientation_rule],
        ["eigen_gap_flag", int(est.gap_flag)],
        ["orientation_fallback_rows", ";".join(map(str, est.fallback_rows)) or "-"],
        ["order", args.order],
    ]
    if labeling is not None:
        diag_rows += [
            ["labeling", args.label],
            ["permutation", ";".join(map(str, labeling.permutation))],
            ["residual_mismatch", labeling.residual_mismatch],
        ]
    _write_csv(out / "estimate_diagnostics.csv", manifest, ["key", "value"], diag_rows)

    se_rows = []
    if args.se != "none":
        if args.order != 3:
            raise _InputError("standard errors are implemented for --order 3 only")
        se_rows = _estimate_se_rows(series.data, probes, pattern, args, n, d, labeling)
        _write_csv(
            out / "estimate_se.csv", manifest,
            ["method", "row", "col", "estimate", "se", "ci_lo", "ci_hi"],
            se_rows,
        )

    _write_summary(out / "estimate_summary.txt", manifest, series, est, labeling, reported, se_rows, args)
    manifest.write(out)
    return EXIT_OK


def _estimate_se_rows(data, probes, pattern, args, n, d, labeling):
    """Per-entry standard errors and CIs for the reported matrix."""
    if pattern is not None:
        def batch(ms):
            rows, _, _, _ = _pipeline.demix_rows(ms, d, probes.w1, probes.w2, "A")
            lam, _, _, _, _ = _pipeline.label_signs(rows, pattern)
            return lam.reshape(ms.shape[0], d * d)
        point = np.asarray(labeling.lambda_final)
    elif args.label == "triangular":
        raise _InputError(
            "standard errors with --label triangular are not supported; "
            "use --label signs:<file> or none"
        )
    else:
        def batch(ms):
            rows, _, _, _ = _pipeline.demix_rows(ms, d, probes.w1, probes.w2, "A")
            return rows.reshape(ms.shape[0], d * d)
        point = None

    out = []
    if args.se in ("delta", "both"):
        res = delta_variance_statistic(data, batch_statistic=batch)
        if point is None:
            values = batch(monomial_matrix(data).mean(axis=0)[None])[0]
            point = values.reshape(d, d)
        variances = np.diag(res.sigma_u).reshape(d, d)
        for i in range(d):
            for j in range(d):
                lo, hi = confidence_interval(point[i, j], variances[i, j], n, args.level)
                out.append([
                    "delta", i, j, float(point[i, j]),
                    float(np.sqrt(variances[i, j] / n)), lo, hi,
                ])
    if args.se in ("jackknife", "both"):
        jk = demixing_jackknife(data, probes, pattern=pattern, entry=None)
        point_jk = point if point is not None else (
            batch(monomial_matrix(data).mean(axis=0)[None])[0].reshape(d, d)
        )
        variances = np.diag(jk.variance).reshape(d, d)
        for i in range(d):
            for j in range(d):
                lo, hi = jackknife_confidence_interval(
                    point_jk[i, j], variances[i, j], args.level
                )
                out.append([
                    "jackknife", i, j, float(point_jk[i, j]),
                    float(np.sqrt(variances[i, j])), lo, hi,
                ])
    return out


def _write_summary(path, manifest, series, est, labeling, reported, se_rows, args):
    d = reported.shape[0]
    lines = [f"cumident {__version__} estimate", ""]
    lines.append(f"series: {', '.join(series.names)} (n = {series.data.shape[0]})")
    lines.append(f"cumulant order: {args.order}; seed: {args.seed}")
    lines.append(f"cond(G(w2)) = {est.cond_G2:.4g}; max imaginary part = {est.max_imag:.3g}")
    if est.gap_flag:
        lines.append("WARNING: near-repeated eigenvalues; rows may be unstable")
    lines.append("")
    title = "structural matrix estimate"
    if labeling is not None:
        title += f" (labeled: {args.label}, permutation {labeling.permutation})"
    else:
        title += " (unlabeled oriented unit rows)"
    lines.append(title)
    for i in range(d):
        lines.append("  " + "  ".join(f"{v: .6f}" for v in reported[i]))
    if se_rows:
        lines.append("")
        lines.append(f"standard errors ({args.se}, level {args.level:g})")
        for row in se_rows:
            lines.append(
                f"  {row[0]:>9} [{row[1]},{row[2]}] = {row[3]: .6f}"
                f"  se {row[4]:.6f}  CI [{row[5]: .6f}, {row[6]: .6f}]"
            )
    path.write_text("\n".join(lines) + "\n")


# -------------------------------------------------------------------- test

def _cmd_test(args, argv) -> int:
    series = _load_csv(args.csv)
    d = series.data.shape[1]
    if d < 2:
        raise _InputError(f"the test needs at least 2 series, found {d}")
    manifest = RunManifest.build("test", args.seed, [args.csv], argv)
    out = _out_dir(args)
    probes = ProbeVectors.draw(d, args.seed)
    result = wald_test(series.data, probes, method=args.omega)
    _write_csv(
        out / "test_result.csv", manifest,
        ["statistic", "dof", "p_value", "method"],
        [[result.statistic, result.dof, result.p_value, result.method]],
    )
    _write_csv(
        out / "test_restrictions.csv", manifest,
        ["index", "r_hat"],
        [[i, float(v)] for i, v in enumerate(result.r_hat)],
    )
    summary = [
        f"cumident {__version__} joint-diagonality test",
        "",
        f"series: {', '.join(series.names)} (n = {series.data.shape[0]})",
        f"omega: {result.method}; seed: {args.seed}",
        f"T = {result.statistic:.6g} on {result.dof} degree(s) of freedom",
        f"p-value = {result.p_value:.6g}",
    ]
    (out / "test_summary.txt").write_text("\n".join(summary) + "\n")
    manifest.write(out)
    return EXIT_OK


# ---------------------------------------------------------------- simulate

_TABLE_DEFAULTS = {
    1: {"ns": (500, 3000, 5000), "ks": (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)},
    2: {"ns": (500, 3000, 5000), "k": 0.5, "level": 0.95},
    3: {"ns": (500, 750, 1000, 5000), "ks": (0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
        "alpha": 0.05},
}


def _as_list(value, cast):
    if isinstance(value, list):
        return tuple(cast(v) for v in value)
    return (cast(value),)


def _cmd_simulate(args, argv) -> int:
    config = {}
    inputs = []
    if args.config is not None:
        try:
            config = load_experiment_config(args.config)
        except (OSError, ValueError) as exc:
            raise _InputError(str(exc)) from exc
        inputs.append(args.config)
    table = args.table if args.table is not None else int(config.get("table", 0))
    if table not in (1, 2, 3):
        raise _InputError("select a table via --table {1,2,3} or the config file")
    seed = args.seed if args.seed is not None else (
        int(config["seed"]) if "seed" in config else None
    )
    if seed is None:
        raise _InputError("a seed is required (--seed or config key 'seed')")
    reps = args.reps if args.reps is not None else int(config.get("reps", 1000))
    defaults = _TABLE_DEFAULTS[table]
    ns = _as_list(config["ns"], int) if "ns" in config else defaults["ns"]
    kurtoses = (
        _as_list(config["kurtoses"], float) if "kurtoses" in config
        else (3.0, 4.0, 5.0)
    )

    manifest = RunManifest.build("simulate", seed, inputs, argv)
    out = _out_dir(args)

    if table == 1:
        ks = _as_list(config["ks"], float) if "ks" in config else defaults["ks"]
        estimators = (
            _as_list(config["estimators"], str) if "estimators" in config
            else ("eigen", "iv1", "iv2")
        )
        result = run_mse_experiment(ns, ks, reps, seed, estimators, kurtoses)
    elif table == 2:
        k = float(config.get("k", defaults["k"]))
        level = float(config.get("level", defaults["level"]))
        methods = (
            _as_list(config["methods"], str) if "methods" in config
            else ("jackknife", "delta")
        )
        result = run_coverage_experiment(ns, k, reps, seed, level, methods, kurtoses)
    else:
        ks = _as_list(config["ks"], float) if "ks" in config else defaults["ks"]
        alpha = float(config.get("alpha", defaults["alpha"]))
        result = run_overid_power_experiment(ns, ks, reps, seed, alpha,
                                             kurtoses=kurtoses)

    write_mc_csv(result, out / f"table{table}.csv",
                 extra_header=manifest.header_lines())

    if args.emit_sample:
        first_k = result.ks[0]
        cfg = CompositeDgpConfig(n=max(ns), k=first_k, kurtoses=kurtoses, seed=seed)
        draw = gen_composite(cfg, 0)
        _write_csv(
            out / "sample.csv", manifest, ["x1", "x2"],
            [[float(a), float(b)] for a, b in draw.x],
        )
    manifest.write(out)
    return EXIT_OK


# --------------------------------------------------------------------- var

def _parse_pairs(text: str):
    if text == "all":
        return "all"
    pairs = []
    try:
        for chunk in text.split(";"):
            i, j = chunk.split(",")
            pairs.append((int(i) - 1, int(j) - 1))
    except ValueError as exc:
        raise _InputError(
            f"--pairs must be 'all' or 'i,j;k,l' with 1-based indices, got {text!r}"
        ) from exc
    return pairs


def _cmd_var(args, argv) -> int:
    series = _load_csv(args.csv)
    names = list(series.names)
    data = series.data
    controls = []
    if args.controls:
        controls = [c.strip() for c in args.controls.split(",")]
        missing = [c for c in controls if c not in names]
        if missing:
            raise _InputError(f"control column(s) not found: {missing}")
        ctl_idx = [names.index(c) for c in controls]
        tgt_idx = [i for i in range(len(names)) if i not in ctl_idx]
        if len(tgt_idx) < 2:
            raise _InputError("need at least 2 non-control series")
        data = partial_out(data[:, tgt_idx], data[:, ctl_idx])
        names = [names[i] for i in tgt_idx]
    if data.shape[1] < 2:
        raise _InputError(f"the VAR needs at least 2 series, found {data.shape[1]}")
    pairs = _parse_pairs(args.pairs)

    manifest = RunManifest.build("var", args.seed, [args.csv], argv)
    out = _out_dir(args)

    fit = fit_var(data, p=args.lags)
    probes = ProbeVectors.draw(2, args.seed)
    report = pairwise_overid(fit, probes, pairs=pairs, alpha=args.alpha)

    rows = [
        [i + 1, j + 1, names[i], names[j], res.statistic, res.dof,
         res.p_value, int(res.p_value < args.alpha)]
        for i, j, res in report.pairs
    ]
    _write_csv(
        out / "var_pairwise.csv", manifest,
        ["i", "j", "series_i", "series_j", "statistic", "dof", "p_value",
         f"reject_at_{args.alpha:g}"],
        rows,
    )
    summary = [
        f"cumident {__version__} pairwise joint-diagonality tests",
        "",
        f"series: {', '.join(names)} (T = {series.data.shape[0]}, lags = {args.lags})",
        f"effective sample: {report.n_effective}; seed: {args.seed}",
    ]
    if controls:
        summary.append(f"partialled-out controls: {', '.join(controls)}")
    for i, j, res in report.pairs:
        flag = "REJECT" if res.p_value < args.alpha else "keep  "
        summary.append(
            f"  ({names[i]}, {names[j]}): T = {res.statistic:8.4f}, "
            f"p = {res.p_value:.4f}  {flag}"
        )
    for i, j, msg in report.failures:
        summary.append(f"  ({names[i]}, {names[j]}): FAILED ({msg})")
    (out / "var_summary.txt").write_text("\n".join(summary) + "\n")
    manifest.write(out)
    return EXIT_OK


# -------------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cumident",
        description="Simultaneous-equation identification from a single "
                    "higher-order cumulant",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="estimate the structural matrix from a CSV")
    p_est.add_argument("csv")
    p_est.add_argument("--seed", type=int, required=True)
    p_est.add_argument("--order", type=int, choices=(3, 4), default=3)
    p_est.add_argument("--w2", default="ones",
                       help="'ones' or a file with d comma-separated entries")
    p_est.add_argument("--label", default="none",
                       help="signs:<pattern-file>, triangular, or none")
    p_est.add_argument("--se", choices=("delta", "jackknife", "both", "none"),
                       default="delta")
    p_est.add_argument("--level", type=float, default=0.95)
    p_est.add_argument("--out", default=".")
    p_est.set_defaults(func=_cmd_estimate)

    p_test = sub.add_parser("test", help="joint-diagonality (uncorrelatedness) test")
    p_test.add_argument("csv")
    p_test.add_argument("--seed", type=int, required=True)
    p_test.add_argument("--omega", choices=("delta", "jackknife"), default="delta")
    p_test.add_argument("--out", default=".")
    p_test.set_defaults(func=_cmd_test)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo table experiment")
    p_sim.add_argument("config", nargs="?", default=None,
                       help="key = value experiment config file")
    p_sim.add_argument("--table", type=int, choices=(1, 2, 3))
    p_sim.add_argument("--reps", type=_positive_int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--emit-sample", action="store_true")
    p_sim.add_argument("--out", default=".")
    p_sim.set_defaults(func=_cmd_simulate)

    p_var = sub.add_parser("var", help="VAR residual pairwise tests on a CSV")
    p_var.add_argument("csv")
    p_var.add_argument("--lags", type=_positive_int, required=True)
    p_var.add_argument("--seed", type=int, required=True)
    p_var.add_argument("--pairs", default="all")
    p_var.add_argument("--controls", default="")
    p_var.add_argument("--alpha", type=float, default=0.05)
    p_var.add_argument("--out", default=".")
    p_var.set_defaults(func=_cmd_var)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args, argv)
    except _InputError as exc:
        print(f"cumident {args.command}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except LabelingAmbiguityError as exc:
        print(f"cumident {args.command}: labeling ambiguity: {exc}", file=sys.stderr)
        return EXIT_LABELING
    except (CumidentError, np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
        print(f"cumident {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
