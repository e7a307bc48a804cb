"""Eigenvector identification of the structural matrix from two contractions.

The demixing rows come out of an eigendecomposition only up to scale and
permutation; the labeling routines at the bottom resolve both, either from a
sign pattern or from a triangular (recursive) ordering.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ComplexResidueWarning,
    EigenGapWarning,
    IllConditionedError,
    LabelingAmbiguityError,
    RankDetectionError,
)
from .moments import ContractionMatrix, contract_hessian, validate_sample

COND_CAP = 1e10
EIGEN_GAP_RTOL = 1e-6
COMPLEX_RESIDUE_TOL = 0.1
ROW_SUM_FALLBACK_TOL = 1e-8
EXHAUSTIVE_PERMUTATION_CAP = 8


@dataclass(frozen=True)
class ProbeVectors:
    """The two contraction directions; w1 is the random probe, w2 the anchor.

    w2 defaults to the all-ones vector, for which invertibility of the
    contraction amounts to nonzero column sums of the mixing matrix.
    """

    w1: np.ndarray
    w2: np.ndarray
    seed: int | None = None

    @classmethod
    def draw(cls, d: int, seed: int, w2=None) -> "ProbeVectors":
        """Draw w1 uniformly on the d-dimensional unit cube from `seed`."""
        w1 = np.random.default_rng(seed).uniform(size=d)
        w2 = np.ones(d) if w2 is None else np.asarray(w2, dtype=float)
        if w2.shape != (d,):
            raise ValueError(f"w2 must have shape ({d},), got {w2.shape}")
        return cls(w1=w1, w2=w2, seed=seed)


@dataclass
class DemixingEstimate:
    """Oriented, row-normalized eigenvector estimate of the demixing matrix.

    Rows of `lambda_tilde` have unit Euclidean norm and estimate the rows of
    the structural matrix up to scale and permutation; `eigenvalues` are the
    real parts of the eigenvalues, sorted descending.
    """

    lambda_tilde: np.ndarray
    eigenvalues: np.ndarray
    max_imag: float
    orientation_rule: str
    cond_G2: float
    gap_flag: bool = False
    fallback_rows: tuple[int, ...] = ()


@dataclass
class MixingEstimate:
    """Unit-norm mixing-matrix columns recovered through the pseudoinverse."""

    a_columns: np.ndarray
    eigenvalues: np.ndarray
    rank_used: int
    sv_threshold: float


@dataclass
class LabelingResult:
    """Permutation and row scales resolving the labeling indeterminacy."""

    permutation: tuple[int, ...]
    scales: np.ndarray
    lambda_final: np.ndarray
    residual_mismatch: float


def _as_matrix(g) -> np.ndarray:
    m = g.matrix if isinstance(g, ContractionMatrix) else np.asarray(g, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return m


def angular_distance(u, v) -> float:
    """Angle (radians) between the lines spanned by u and v; sign-blind.

    Uses the chord formulation 2*arcsin(||u - v||/2) on sign-aligned unit
    vectors, which stays accurate for tiny angles where the arccos of an
    inner product saturates at sqrt(machine eps).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u = u / np.linalg.norm(u)
    v = v / np.linalg.norm(v)
    if u @ v < 0:
        v = -v
    return float(2.0 * np.arcsin(min(1.0, np.linalg.norm(u - v) / 2.0)))


def build_H(g1, g2, cond_cap: float = COND_CAP) -> np.ndarray:
    """Form g2^{-1} g1 through a linear solve, never an explicit inverse.

    Raises
    ------
    IllConditionedError
        If g2's condition estimate exceeds `cond_cap`.  This typically means
        (A'w2) has a near-zero coordinate or a shock has no skewness; the
        tall/pseudoinverse path is the usual fallback.
    """
    m1 = _as_matrix(g1)
    m2 = _as_matrix(g2)
    cond = float(np.linalg.cond(m2))
    if not np.isfinite(cond) or cond > cond_cap:
        raise IllConditionedError("contraction at w2 is numerically singular", cond)
    return np.linalg.solve(m2, m1)


def _sorted_eig(h: np.ndarray):
    """Eigenpairs sorted by descending real part, then descending imaginary
    part, then original index."""
    vals, vecs = np.linalg.eig(h)
    order = np.lexsort((-vals.imag, -vals.real))
    return vals[order], vecs[:, order]


def orient_rows(rows: np.ndarray, rule: str = "A") -> tuple[np.ndarray, tuple[int, ...]]:
    """Fix each row's sign by the requested rule; idempotent.

    Rule A flips a row so its sum is positive; if the row sum is too close
    to zero to be trusted, that row falls back to rule B (largest-magnitude
    coordinate made positive) and its index is reported.
    """
    if rule not in ("A", "B"):
        raise ValueError(f"orientation rule must be 'A' or 'B', got {rule!r}")
    out = np.array(rows, dtype=float)
    fallback = []
    for i, row in enumerate(out):
        if rule == "A":
            s = row.sum()
            if abs(s) < ROW_SUM_FALLBACK_TOL:
                fallback.append(i)
                s = row[np.argmax(np.abs(row))]
        else:
            s = row[np.argmax(np.abs(row))]
        if s < 0:
            out[i] = -row
    return out, tuple(fallback)


def oriented_eigenvector_rows(h, rule: str = "A"):
    """Eigendecompose a d x d identification matrix into demixing rows.

    Returns (lambda_tilde, eigenvalues, max_imag, fallback_rows, gap_flag):
    rows are real parts of the sorted eigenvectors, unit-normalized and
    oriented.  Near-coincident eigenvalues raise :class:`EigenGapWarning`
    (identification holds only almost surely); a large imaginary residue
    raises :class:`ComplexResidueWarning` but the real part is still used.
    """
    hm = _as_matrix(h)
    vals, vecs = _sorted_eig(hm)
    scale = max(np.max(np.abs(vals)), np.finfo(float).tiny)
    gap_flag = False
    if hm.shape[0] > 1:
        gaps = np.abs(np.diff(vals))
        if gaps.min() < EIGEN_GAP_RTOL * scale:
            gap_flag = True
            warnings.warn(
                "near-repeated eigenvalues (relative gap "
                f"{gaps.min() / scale:.2e}); demixing rows may be unstable",
                EigenGapWarning,
                stacklevel=3,
            )
    max_imag = float(np.max(np.abs(vecs.imag)))
    if max_imag > COMPLEX_RESIDUE_TOL:
        warnings.warn(
            f"eigenvectors had imaginary parts up to {max_imag:.3f}; "
            "real parts are returned",
            ComplexResidueWarning,
            stacklevel=3,
        )
    rows = vecs.real.T
    norms = np.linalg.norm(rows, axis=1)
    rows = rows / np.maximum(norms, np.finfo(float).tiny)[:, None]
    rows, fallback = orient_rows(rows, rule)
    return rows, vals.real, max_imag, fallback, gap_flag


def demixing_from_contractions(g1, g2, rule: str = "A") -> DemixingEstimate:
    """Demixing estimate from two precomputed contraction matrices."""
    m2 = _as_matrix(g2)
    h = build_H(g1, m2)
    rows, vals, max_imag, fallback, gap_flag = oriented_eigenvector_rows(h, rule)
    return DemixingEstimate(
        lambda_tilde=rows,
        eigenvalues=vals,
        max_imag=max_imag,
        orientation_rule=rule,
        cond_G2=float(np.linalg.cond(m2)),
        gap_flag=gap_flag,
        fallback_rows=fallback,
    )


def estimate_demixing(data, probes: ProbeVectors, order: int = 3,
                      rule: str = "A") -> DemixingEstimate:
    """Estimate the demixing matrix rows from a single cumulant order.

    Contracts the sample cumulant Hessian at the two probe directions,
    solves the generalized eigenproblem and returns oriented unit rows.
    """
    x = validate_sample(data, min_cols=2)
    if x.shape[0] < x.shape[1] + 1:
        raise ValueError("need at least d + 1 observations")
    g1 = contract_hessian(x, probes.w1, order)
    g2 = contract_hessian(x, probes.w2, order)
    return demixing_from_contractions(g1, g2, rule)


def build_H_sigma(data, w1) -> np.ndarray:
    """Covariance-anchored identification matrix Var(X)^{-1} G(w1).

    Valid only under uncorrelated structural errors; the overidentification
    test deliberately never uses this variant.
    """
    x = validate_sample(data, min_rows=2, min_cols=2)
    xc = x - x.mean(axis=0)
    sigma = xc.T @ xc / x.shape[0]
    cond = float(np.linalg.cond(sigma))
    if not np.isfinite(cond) or cond > COND_CAP:
        raise IllConditionedError("sample covariance is numerically singular", cond)
    g1 = contract_hessian(x, w1, order=3)
    return np.linalg.solve(sigma, g1.matrix)


def estimate_mixing_tall(data, probes: ProbeVectors, d2: int | None = None,
                         rule: str = "A") -> MixingEstimate:
    """Recover mixing-matrix columns when the mixing matrix is tall.

    Uses G(w1) G(w2)^+ with an SVD-truncated pseudoinverse; the right
    eigenvectors attached to the largest-magnitude eigenvalues estimate the
    columns of the mixing matrix.  Also covers the square case with some
    non-skewed shocks, where only the skewed shocks' columns are
    recoverable (pass their count as `d2`).

    Parameters
    ----------
    d2 : int or None
        Number of columns (skewed shocks).  None selects the rank
        automatically from the singular-value spectrum of G(w2), which is
        reliable only when the rank deficiency is near-exact; statistical
        noise calls for an explicit `d2`.
    """
    x = validate_sample(data, min_cols=2)
    d1 = x.shape[1]
    g1 = contract_hessian(x, probes.w1, order=3).matrix
    g2 = contract_hessian(x, probes.w2, order=3).matrix
    u, s, vt = np.linalg.svd(g2)
    if d2 is None:
        rank, sv_threshold = _auto_rank(s, d1)
    else:
        if not 1 <= d2 <= d1:
            raise ValueError(f"d2 must be in [1, {d1}], got {d2}")
        rank = d2
        sv_threshold = float(s[rank]) if rank < d1 else 0.0
    g2_pinv = vt[:rank].T @ (u[:, :rank] / s[:rank]).T
    h = g1 @ g2_pinv
    vals, vecs = np.linalg.eig(h)
    keep = np.argsort(-np.abs(vals))[:rank]
    cols = vecs[:, keep].real
    cols = cols / np.maximum(np.linalg.norm(cols, axis=0), np.finfo(float).tiny)
    cols, _ = orient_rows(cols.T, rule)
    return MixingEstimate(
        a_columns=cols.T,
        eigenvalues=vals[keep].real,
        rank_used=rank,
        sv_threshold=sv_threshold,
    )


def _auto_rank(s: np.ndarray, d1: int) -> tuple[int, float]:
    """Rank of a contraction from its singular values, with a gap guard.

    Keeps singular values above 1e-8 * sqrt(d1) * s_max; if the gap between
    the smallest kept and the largest dropped value is within 10x of that
    threshold, the detection is declared unstable.
    """
    thr = 1e-8 * np.sqrt(d1) * s[0]
    rank = int(np.sum(s > thr))
    if rank == 0:
        raise RankDetectionError("contraction at w2 is numerically zero")
    if rank < d1 and (s[rank - 1] - s[rank]) < 10.0 * thr:
        raise RankDetectionError(
            "singular-value gap of G(w2) too small for automatic rank "
            f"detection (spectrum {s}); pass d2 explicitly"
        )
    return rank, float(thr)


def _candidate_permutations(d: int, kind: str):
    if d <= EXHAUSTIVE_PERMUTATION_CAP:
        return itertools.permutations(range(d))
    warnings.warn(
        f"d = {d} exceeds the exhaustive search cap; {kind} labeling falls "
        "back to greedy assignment",
        UserWarning,
        stacklevel=3,
    )
    return None


def _diag_normalize(block: np.ndarray):
    """Divide each row by its diagonal entry; None if a diagonal is ~ zero."""
    diag = np.diagonal(block).copy()
    if np.any(np.abs(diag) < 1e-12 * max(np.max(np.abs(block)), 1e-300)):
        return None, None
    return block / diag[:, None], 1.0 / diag


def _sign_mismatches(normalized: np.ndarray, pattern: np.ndarray) -> int:
    active = pattern != 0
    return int(np.sum(np.sign(normalized)[active] != pattern[active]))


def _sign_margin(normalized: np.ndarray, pattern: np.ndarray) -> float:
    active = pattern != 0
    return float(np.sum(pattern[active] * normalized[active]))


def _greedy_sign_permutation(rows: np.ndarray, pattern: np.ndarray) -> tuple[int, ...]:
    d = rows.shape[0]
    remaining = list(range(d))
    perm = []
    for i in range(d):
        best, best_key = None, None
        for r in remaining:
            if abs(rows[r, i]) < 1e-300:
                continue
            row = rows[r] / rows[r, i]
            active = pattern[i] != 0
            mism = int(np.sum(np.sign(row)[active] != pattern[i][active]))
            margin = float(np.sum(pattern[i][active] * row[active]))
            key = (mism, -margin)
            if best_key is None or key < best_key:
                best, best_key = r, key
        if best is None:
            best = remaining[0]
        perm.append(best)
        remaining.remove(best)
    return tuple(perm)


def label_by_signs(est: DemixingEstimate, sign_pattern,
                   on_tie: str = "error") -> LabelingResult:
    """Resolve permutation and scale from a row sign pattern.

    Searches row permutations, normalizes each candidate so its diagonal is
    exactly one (which also fixes row signs), and selects the assignment
    with the fewest sign mismatches against `sign_pattern` (entries in
    {-1, 0, +1}; zeros are ignored).

    Parameters
    ----------
    on_tie : {"error", "margin"}
        With "error", two assignments tying on mismatch count raise
        :class:`LabelingAmbiguityError` listing both.  With "margin", ties
        are broken by the larger signed agreement
        sum(pattern * normalized entries); only an exact margin tie raises.
    """
    pattern = np.asarray(sign_pattern)
    rows = est.lambda_tilde
    d = rows.shape[0]
    if pattern.shape != (d, d):
        raise ValueError(f"sign pattern must be {d}x{d}, got {pattern.shape}")
    if not np.isin(pattern, (-1, 0, 1)).all():
        raise ValueError("sign pattern entries must be -1, 0 or +1")
    if len({tuple(r) for r in pattern.tolist()}) < d:
        raise ValueError("sign pattern rows must be pairwise distinct")
    if on_tie not in ("error", "margin"):
        raise ValueError(f"on_tie must be 'error' or 'margin', got {on_tie!r}")

    perms = _candidate_permutations(d, "sign")
    if perms is None:
        perms = [_greedy_sign_permutation(rows, pattern)]

    candidates = []  # (mismatches, -margin, perm, normalized, scales)
    for perm in perms:
        block = rows[list(perm), :]
        normalized, scales = _diag_normalize(block)
        if normalized is None:
            continue
        candidates.append((
            _sign_mismatches(normalized, pattern),
            -_sign_margin(normalized, pattern),
            perm,
            normalized,
            scales,
        ))
    if not candidates:
        raise LabelingAmbiguityError(
            "no row permutation yields a nonzero diagonal", []
        )
    candidates.sort(key=lambda c: (c[0], c[1]))
    best = candidates[0]
    tied = [c for c in candidates[1:] if c[0] == best[0]]
    if tied:
        if on_tie == "error":
            raise LabelingAmbiguityError(
                "sign labeling is ambiguous", [best[2]] + [c[2] for c in tied]
            )
        # Sorted by (mismatches, -margin), so `best` already carries the
        # largest margin; only an exact margin tie is irresolvable.
        margin_tied = [c[2] for c in tied if c[1] == best[1]]
        if margin_tied:
            raise LabelingAmbiguityError(
                "sign labeling is ambiguous even after margin tie-break",
                [best[2]] + margin_tied,
            )
    mism, _, perm, normalized, scales = best
    return LabelingResult(
        permutation=tuple(perm),
        scales=scales,
        lambda_final=normalized,
        residual_mismatch=float(mism),
    )


def label_by_triangular(est: DemixingEstimate) -> LabelingResult:
    """Order rows to make the normalized matrix as lower-triangular as possible.

    Minimizes the sum of squared above-diagonal entries after diagonal
    normalization and reports that mass; never raises on a poor fit, the
    caller judges the residual.
    """
    rows = est.lambda_tilde
    d = rows.shape[0]
    perms = _candidate_permutations(d, "triangular")
    if perms is None:
        perms = [_greedy_triangular_permutation(rows)]
    best = None
    upper = np.triu_indices(d, 1)
    for perm in perms:
        block = rows[list(perm), :]
        normalized, scales = _diag_normalize(block)
        if normalized is None:
            continue
        residual = float(np.sum(normalized[upper] ** 2))
        if best is None or residual < best[0]:
            best = (residual, perm, normalized, scales)
    if best is None:
        raise LabelingAmbiguityError(
            "no row permutation yields a nonzero diagonal", []
        )
    residual, perm, normalized, scales = best
    return LabelingResult(
        permutation=tuple(perm),
        scales=scales,
        lambda_final=normalized,
        residual_mismatch=residual,
    )


def _greedy_triangular_permutation(rows: np.ndarray) -> tuple[int, ...]:
    d = rows.shape[0]
    remaining = list(range(d))
    perm = []
    for i in range(d):
        best, best_mass = None, None
        for r in remaining:
            if abs(rows[r, i]) < 1e-300:
                continue
            row = rows[r] / rows[r, i]
            mass = float(np.sum(row[i + 1:] ** 2))
            if best_mass is None or mass < best_mass:
                best, best_mass = r, mass
        if best is None:
            best = remaining[0]
        perm.append(best)
        remaining.remove(best)
    return tuple(perm)
