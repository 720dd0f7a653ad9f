# ------------------------
# Simplified recommendation algorithms and typical users
# ------------------------
"""
Both the quantum algorithm and its classical counterpart sample product j
for user i with probability (T_{<=k})_{ij}^2 / |(T_{<=k})_i|^2. The quantum
path only materializes row i (the projection the phase-estimation circuit
performs); the classical path materializes T_{<=k}. The output law is the
same, so one distribution backs both.
"""
import logging

import numpy as np

from .errors import ColdUserError, DimensionError, PreconditionError
from .linalg_svd import CLUSTER_TOLERANCE, l2_sample, low_rank_matrix, low_rank_row, svd
from .matrix_io import row_norms_sq
from .models import TypicalityReport
from .sketch_fkv import fkv_row

logger = logging.getLogger(__name__)

COLD_TOLERANCE = 1e-20
ALGORITHMS = ("quantum", "classical")
BACKENDS = ("exact", "fkv")


def _normalise(row, i, k, scale):
    weights = np.square(row)
    total = float(weights.sum())
    if total <= COLD_TOLERANCE * max(scale, 1.0):
        raise ColdUserError(f"user {i} is a cold user at this cutoff (k={k})")
    return weights / total


def recommendation_distribution(factors, i, k):
    """Probability vector over products for user i at cutoff k."""
    return _normalise(low_rank_row(factors, i, k), i, k, factors.frobenius_sq)


def recommend(matrix, i, k, rng, backend="exact", *, factors=None, sketch=None,
              algorithm="quantum"):
    """
    Sample one product for user i.

    ``algorithm`` picks how the row is materialized on the exact backend:
    "quantum" builds only (T_{<=k})_i, "classical" builds T_{<=k} first.
    """
    if backend not in BACKENDS:
        raise PreconditionError(f"unknown backend {backend!r}")
    if backend == "fkv":
        if sketch is None:
            raise PreconditionError("fkv backend requires a prepared sketch")
        row = fkv_row(sketch, matrix, i)
        scale = float(row_norms_sq(matrix).sum())
        _normalise(row, i, sketch.k, scale)
        return l2_sample(row, rng)

    if algorithm not in ALGORITHMS:
        raise PreconditionError(f"unknown algorithm {algorithm!r}")
    if factors is None:
        factors = svd(matrix, max(k, 1))
    if algorithm == "classical":
        if not 0 <= i < factors.m:
            raise DimensionError(f"user index {i} outside [0, {factors.m})")
        row = low_rank_matrix(factors, k)[i]
    else:
        row = low_rank_row(factors, i, k)
    _normalise(row, i, k, factors.frobenius_sq)
    logger.debug("recommend user=%d k=%d via %s row", i, k, algorithm)
    return l2_sample(row, rng)


def project_row_by_sigma(factors, i, sigma_threshold):
    """
    Project T_i onto span{v_lambda : sigma_lambda >= sigma_threshold}.

    <T_i, v_lambda> = sigma_lambda u_{lambda i}, so the factorization alone
    suffices. Singular values within CLUSTER_TOLERANCE * sigma_1 of the
    threshold are included with their whole cluster.
    """
    if sigma_threshold < 0:
        raise PreconditionError("sigma threshold must be non-negative")
    if not 0 <= i < factors.m:
        raise DimensionError(f"user index {i} outside [0, {factors.m})")
    sigma = factors.sigma
    slack = CLUSTER_TOLERANCE * (sigma[0] if sigma.size else 0.0)
    if not factors.is_full_rank:
        uncomputed = min(sigma[-1], np.sqrt(factors.residual_tail_sq))
        if factors.residual_tail_sq > slack**2 and sigma_threshold - slack <= uncomputed:
            raise PreconditionError(
                f"threshold {sigma_threshold:.6g} reaches the uncomputed tail "
                f"(rank {factors.r}, tail norm {np.sqrt(factors.residual_tail_sq):.6g})"
            )
    keep = sigma >= sigma_threshold - slack
    weights = sigma[keep] * factors.left[i, keep]
    return factors.right[:, keep] @ weights


# ------------------------
# Typical users
# ------------------------
def gamma_tilde(gamma, eta):
    """Smallest gamma' keeping a gamma-typical user typical after one flip."""
    if gamma < 0:
        raise PreconditionError(f"gamma={gamma} must be non-negative")
    floor = eta / (1.0 + gamma)
    if floor <= 1.0:
        raise PreconditionError(f"eta too small for gamma (eta/(1+gamma) = {floor:.6g} <= 1)")
    return gamma + (1.0 + gamma) / (floor - 1.0)


def typicality(matrix, gamma):
    if gamma <= 0:
        raise PreconditionError(f"gamma={gamma} must be positive")
    norms = row_norms_sq(matrix)
    eta = float(norms.sum()) / norms.size if norms.size else 0.0
    if eta <= 0.0:
        raise PreconditionError("eta = 0: the matrix has no records")
    is_typical = (norms >= eta / (1.0 + gamma)) & (norms <= (1.0 + gamma) * eta)
    try:
        tilde = gamma_tilde(gamma, eta)
    except PreconditionError:
        logger.warning("gamma_tilde undefined for eta=%.4g gamma=%.4g", eta, gamma)
        tilde = None
    report = TypicalityReport(
        eta=eta, gamma=float(gamma), gamma_tilde=tilde,
        row_norm_sq=norms, is_typical=is_typical,
    )
    logger.info("%d of %d users are %.3g-typical", report.typical_count, norms.size, gamma)
    return report
