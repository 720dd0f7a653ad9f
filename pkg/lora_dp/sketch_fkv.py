"""
Quantum-inspired classical sketch (ModFKV).

Rows of T are drawn by l2 importance sampling into a q x n matrix S, columns
of S are drawn the same way into a q x q matrix W, and the left singular
vectors of W above the threshold sigma are lifted back to R^n through S.
"""
import logging
import math

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import DimensionError, EmptyFilterError, PreconditionError
from .linalg_svd import _fix_signs, low_rank_matrix, svd
from .matrix_io import row_norms_sq
from .models import FkvQuality, FkvSketch, PreferenceMatrix

logger = logging.getLogger(__name__)

NORMALIZERS = ("sketch", "exact")


def _rows(matrix, ids):
    """Dense copy of the selected rows."""
    if isinstance(matrix, PreferenceMatrix):
        matrix = matrix.to_csr()
    if sp.issparse(matrix):
        return matrix[ids].toarray()
    return np.asarray(matrix, dtype=np.float64)[ids]


def sketch_size(frobenius_sq, sigma, eps, kappa, c=1.0, q_cap=None):
    """q = min(ceil(c K^4 / eps_bar^2), q_cap) with K = |T|^2/sigma^2, eps_bar = kappa eps^2."""
    K = frobenius_sq / sigma**2
    eps_bar = kappa * eps**2
    theoretical = c * K**4 / eps_bar**2
    q = theoretical if q_cap is None else min(theoretical, q_cap)
    if not math.isfinite(q):
        raise PreconditionError("sketch size overflows; pass q_cap")
    return K, eps_bar, int(math.ceil(q))


def modfkv(matrix, sigma, eps, kappa, rng, q_cap=None, c=1.0, normalizer="sketch"):
    """
    Build the sketch. ``q_cap`` defaults to min(m, n); larger caps are
    allowed because rows are sampled with replacement.

    ``normalizer="sketch"`` divides S^T u by |W^T u|; ``"exact"`` divides by
    |S^T u| so every reconstructed vector is unit norm.
    """
    if sigma <= 0:
        raise PreconditionError("sigma must be positive")
    if not (0 < eps <= 1 and 0 < kappa <= 1):
        raise PreconditionError("eps and kappa must lie in (0, 1]")
    if normalizer not in NORMALIZERS:
        raise PreconditionError(f"unknown normalizer {normalizer!r}")
    m, n = matrix.shape
    norms = row_norms_sq(matrix)
    frobenius_sq = float(norms.sum())
    if frobenius_sq <= 0:
        raise PreconditionError("cannot sketch an all-zero matrix")
    cap = min(m, n) if q_cap is None else int(q_cap)
    K, eps_bar, q = sketch_size(frobenius_sq, sigma, eps, kappa, c=c, q_cap=cap)
    if q < 1:
        raise PreconditionError(f"sketch size q={q} < 1")

    generator = rng.generator
    row_probs_all = norms / frobenius_sq
    row_ids = generator.choice(m, size=q, p=row_probs_all)
    row_probs = row_probs_all[row_ids]
    S = _rows(matrix, row_ids) / np.sqrt(q * row_probs)[:, None]

    col_norms = np.einsum("ij,ij->j", S, S)
    col_probs_all = col_norms / col_norms.sum()
    col_ids = generator.choice(n, size=q, p=col_probs_all)
    col_probs = col_probs_all[col_ids]
    W = S[:, col_ids] / np.sqrt(q * col_probs)[None, :]

    u, s, _ = la.svd(W, full_matrices=False)
    keep = s >= sigma
    if not keep.any():
        raise EmptyFilterError(
            f"threshold filters everything (sigma={sigma:.6g}, top sketch value {s[0]:.6g})"
        )
    u_kept = u[:, keep]
    lifted = S.T @ u_kept
    if normalizer == "sketch":
        denominators = np.linalg.norm(W.T @ u_kept, axis=0)
    else:
        denominators = np.linalg.norm(lifted, axis=0)
    _, V_hat = _fix_signs(u_kept, lifted / denominators)

    logger.info("modfkv q=%d K=%.4g kept %d of %d sketch values", q, K, int(keep.sum()), s.size)
    return FkvSketch(
        q=q, row_ids=row_ids, row_probs=row_probs, col_ids=col_ids, col_probs=col_probs,
        W=W, sigma_hat=s[keep], V_hat=V_hat, K=K, eps_bar=eps_bar, sigma=float(sigma),
        normalizer=normalizer,
    )


def sampled_rows(sketch, matrix):
    """Rebuild the rescaled row sample S of a sketch."""
    return _rows(matrix, sketch.row_ids) / np.sqrt(sketch.q * sketch.row_probs)[:, None]


def fkv_row(sketch, matrix, i):
    """T_i projected onto the reconstructed right vectors."""
    m = matrix.shape[0]
    if not 0 <= i < m:
        raise DimensionError(f"user index {i} outside [0, {m})")
    row = _rows(matrix, [i])[0]
    return sketch.V_hat @ (sketch.V_hat.T @ row)


def fkv_quality(sketch, matrix, k, factors=None):
    """Projector residual and principal angles against the exact top-k space."""
    if k < 1 or k > sketch.k:
        raise DimensionError(f"k={k} exceeds sketch rank {sketch.k}")
    if factors is None:
        factors = svd(matrix, k)
    target = low_rank_matrix(factors, k)
    norm = np.linalg.norm(target)
    projected = (target @ sketch.V_hat) @ sketch.V_hat.T
    residual = float(np.linalg.norm(target - projected) / norm) if norm > 0 else 0.0
    angles = la.subspace_angles(sketch.V_hat, factors.right[:, :k])
    return FkvQuality(k=k, projector_residual=residual, angles=np.sort(angles))


def export_sketch_csv(sketch, path):
    """One line per kept vector: sigma_hat, then v_hat."""
    np.savetxt(path, np.hstack([sketch.sigma_hat[:, None], sketch.V_hat.T]),
               delimiter=",", fmt="%.17g")
    return path
