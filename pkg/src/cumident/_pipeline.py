"""Moment-parameterized estimation pipeline, vectorized over moment vectors.

Everything downstream of the raw-moment vector (cumulant map, contractions,
eigendecomposition, orientation, labeling, demixed-covariance off-diagonals)
is re-expressed here to act on a stack of moment vectors at once.  The delta
method perturbs the moment vector, the jackknife downdates it once per
observation, and the Wald test differentiates through it; all three share
these kernels.  Single-vector callers get bit-identical results to the
batched ones by construction.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import IllConditionedError
from .identify import EIGEN_GAP_RTOL, ROW_SUM_FALLBACK_TOL
from .moments import (
    contract_tensor,
    covariance_from_moments,
    cumulants_from_moments,
)

_INVALID_MISMATCH = np.iinfo(np.int32).max


def leave_one_out_moments(monomials: np.ndarray) -> np.ndarray:
    """Delete-1 moment vectors from the (n, D) per-observation monomials."""
    n = monomials.shape[0]
    total = monomials.sum(axis=0)
    return (total[None, :] - monomials) / (n - 1)


def _solve_batched(g2: np.ndarray, g1: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(g2, g1)
    except np.linalg.LinAlgError:
        if g2.ndim == 2:
            raise IllConditionedError(
                "contraction at w2 is numerically singular",
                float(np.linalg.cond(g2)),
            ) from None
        bad = [
            i for i in range(g2.shape[0])
            if not np.isfinite(np.linalg.cond(g2[i]))
            or np.linalg.cond(g2[i]) > 1e15
        ]
        raise IllConditionedError(
            f"singular contraction at w2 in batch entries {bad[:10]}",
            float("inf"),
        ) from None


def demix_rows(ms: np.ndarray, d: int, w1, w2, rule: str = "A",
               cond_cap: float | None = None):
    """Oriented unit demixing rows for each moment vector in the stack.

    Parameters
    ----------
    ms : ndarray, shape (..., D) with D = binom(d+3,3)-1
        Raw-moment vectors in the package-wide monomial order.
    cond_cap : float or None
        When set (single-vector entry points), reject a contraction at w2
        whose condition estimate exceeds the cap instead of solving through
        it.  Batched resampling paths leave it off for speed.

    Returns
    -------
    rows : ndarray, shape (..., d, d)
    eigenvalues : ndarray, shape (..., d), real parts, sorted descending
    gap_flags : ndarray of bool, shape (...,)
    max_imag : ndarray, shape (...,)
    """
    tensors = cumulants_from_moments(ms, d)
    g1 = 6.0 * contract_tensor(tensors, np.asarray(w1, dtype=float))
    g2 = 6.0 * contract_tensor(tensors, np.asarray(w2, dtype=float))
    if cond_cap is not None and g2.ndim == 2:
        cond = float(np.linalg.cond(g2))
        if not np.isfinite(cond) or cond > cond_cap:
            raise IllConditionedError(
                "contraction at w2 is numerically singular", cond
            )
    h = _solve_batched(g2, g1)
    vals, vecs = np.linalg.eig(h)
    order = np.lexsort((-vals.imag, -vals.real), axis=-1)
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[..., None, :], axis=-1)

    scale = np.maximum(np.abs(vals).max(axis=-1), np.finfo(float).tiny)
    gaps = np.abs(np.diff(vals, axis=-1)).min(axis=-1)
    gap_flags = gaps < EIGEN_GAP_RTOL * scale
    max_imag = np.abs(vecs.imag).max(axis=(-2, -1))

    rows = np.swapaxes(vecs.real, -2, -1)
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    rows = rows / np.maximum(norms, np.finfo(float).tiny)
    rows = _orient_rows_batched(rows, rule)
    return rows, vals.real, gap_flags, max_imag


def _orient_rows_batched(rows: np.ndarray, rule: str) -> np.ndarray:
    """Vectorized twin of identify.orient_rows (same fallback rule)."""
    peak_idx = np.argmax(np.abs(rows), axis=-1)
    peak = np.take_along_axis(rows, peak_idx[..., None], axis=-1)[..., 0]
    if rule == "A":
        s = rows.sum(axis=-1)
        s = np.where(np.abs(s) < ROW_SUM_FALLBACK_TOL, peak, s)
    elif rule == "B":
        s = peak
    else:
        raise ValueError(f"orientation rule must be 'A' or 'B', got {rule!r}")
    return np.where((s < 0)[..., None], -rows, rows)


def overid_offdiag(ms: np.ndarray, d: int, w1, w2, rule: str = "A") -> np.ndarray:
    """vech_off(L Sigma L') for each moment vector; shape (..., d*(d-1)/2)."""
    rows, _, _, _ = demix_rows(ms, d, w1, w2, rule)
    sigma = covariance_from_moments(ms, d)
    demixed = rows @ sigma @ np.swapaxes(rows, -2, -1)
    iu = np.triu_indices(d, 1)
    return demixed[..., iu[0], iu[1]]


def label_signs(rows: np.ndarray, pattern: np.ndarray):
    """Vectorized sign labeling with margin tie-break over a stack of rows.

    Returns (lambda_final, mismatches, tie_flags, perm_index, permutations):
    `tie_flags` marks entries where two permutations tied on mismatch count
    (resolved by margin), and `permutations` lists the candidate orderings
    indexed by `perm_index`.
    """
    squeeze = rows.ndim == 2
    r = rows[None] if squeeze else rows
    b, d, _ = r.shape
    pattern = np.asarray(pattern)
    perms = list(itertools.permutations(range(d)))
    active = pattern != 0

    mism = np.full((len(perms), b), _INVALID_MISMATCH, dtype=np.int64)
    margin = np.full((len(perms), b), -np.inf)
    normalized_all = np.empty((len(perms), b, d, d))
    ridx = np.arange(d)
    for p, perm in enumerate(perms):
        block = r[:, perm, :]
        diag = block[:, ridx, ridx]
        valid = np.all(
            np.abs(diag) > 1e-12 * np.maximum(
                np.abs(block).max(axis=(-2, -1)), 1e-300
            )[:, None],
            axis=-1,
        )
        safe = np.where(np.abs(diag) < 1e-300, 1.0, diag)
        normalized = block / safe[:, :, None]
        normalized_all[p] = normalized
        m = np.sum(np.sign(normalized)[:, active] != pattern[active], axis=-1)
        g = np.sum(pattern[active] * normalized[:, active], axis=-1)
        mism[p] = np.where(valid, m, _INVALID_MISMATCH)
        margin[p] = np.where(valid, g, -np.inf)

    best_mism = mism.min(axis=0)
    at_best = mism == best_mism[None, :]
    tie_flags = at_best.sum(axis=0) > 1
    margin_masked = np.where(at_best, margin, -np.inf)
    perm_index = margin_masked.argmax(axis=0)
    lam = normalized_all[perm_index, np.arange(b)]
    if squeeze:
        return lam[0], int(best_mism[0]), bool(tie_flags[0]), int(perm_index[0]), perms
    return lam, best_mism, tie_flags, perm_index, perms


def label_triangular(rows: np.ndarray):
    """Vectorized triangular labeling over a stack of demixing rows.

    Picks, per stack entry, the row permutation minimizing the sum of
    squared above-diagonal entries after diagonal normalization.  Returns
    (lambda_final, residual, perm_index, permutations).
    """
    squeeze = rows.ndim == 2
    r = rows[None] if squeeze else rows
    b, d, _ = r.shape
    perms = list(itertools.permutations(range(d)))
    residual = np.full((len(perms), b), np.inf)
    normalized_all = np.empty((len(perms), b, d, d))
    ridx = np.arange(d)
    iu = np.triu_indices(d, 1)
    for p, perm in enumerate(perms):
        block = r[:, perm, :]
        diag = block[:, ridx, ridx]
        valid = np.all(
            np.abs(diag) > 1e-12 * np.maximum(
                np.abs(block).max(axis=(-2, -1)), 1e-300
            )[:, None],
            axis=-1,
        )
        safe = np.where(np.abs(diag) < 1e-300, 1.0, diag)
        normalized = block / safe[:, :, None]
        normalized_all[p] = normalized
        mass = np.sum(normalized[:, iu[0], iu[1]] ** 2, axis=-1)
        residual[p] = np.where(valid, mass, np.inf)

    perm_index = residual.argmin(axis=0)
    lam = normalized_all[perm_index, np.arange(b)]
    res = residual[perm_index, np.arange(b)]
    if squeeze:
        return lam[0], float(res[0]), int(perm_index[0]), perms
    return lam, res, perm_index, perms


def labeled_entry(ms: np.ndarray, d: int, w1, w2, pattern, entry=(0, 1),
                  rule: str = "A"):
    """One entry of the sign-labeled, diagonal-normalized demixing matrix.

    Returns (values, diagnostics) where diagnostics carries the gap flags,
    labeling tie flags and chosen permutation index per stack entry.
    """
    rows, _, gap_flags, _ = demix_rows(ms, d, w1, w2, rule)
    lam, mism, ties, perm_index, perms = label_signs(rows, pattern)
    values = lam[..., entry[0], entry[1]]
    return values, {
        "gap_flags": gap_flags,
        "mismatches": mism,
        "tie_flags": ties,
        "perm_index": perm_index,
        "permutations": perms,
    }


def batched_jacobian(func, m: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of a batch-capable map of the moments.

    `func` maps a (B, D) stack to (B,) or (B, q); the 2D perturbation stack
    (one +/- pair per coordinate) is evaluated in a single call.
    """
    k = m.shape[0]
    stack = np.repeat(m[None, :], 2 * k, axis=0)
    idx = np.arange(k)
    stack[2 * idx, idx] += steps
    stack[2 * idx + 1, idx] -= steps
    out = np.asarray(func(stack))
    if out.ndim == 1:
        out = out[:, None]
    return ((out[2 * idx] - out[2 * idx + 1]) / (2.0 * steps)[:, None]).T
