"""
SVD engine, rank-k approximation and l2-norm sampling.

Dense LAPACK bidiagonalization handles everything up to DENSE_LIMIT on the
short side; above that a randomized block subspace iteration with a fixed
test-matrix seed takes over.
"""
import logging

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import DimensionError, PreconditionError, SvdConvergenceError
from .models import PreferenceMatrix, SvdFactorization

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2048
OVERSAMPLING = 10
POWER_ITERATIONS = 4
MAX_POWER_ITERATIONS = 50
POWER_TOLERANCE = 1e-4
SKETCH_SEED = 0x10BA
CLUSTER_TOLERANCE = 1e-9
_MASK64 = (1 << 64) - 1


# ------------------------
# Deterministic random streams
# ------------------------
class Rng:
    """
    PCG64 stream keyed by a 64-bit seed and a 64-bit stream index.

    The generator is seeded from ``SeedSequence(seed, spawn_key=(stream,))``,
    so (seed, stream) reproduces the same sequence on every platform numpy
    supports. ``child(t)`` derives the stream used by trial t.
    """

    def __init__(self, seed=0, stream=0, *, parent=()):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self.key = (*parent, self.stream)
        bits = np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.key))
        self.generator = np.random.Generator(bits)

    def child(self, stream):
        return Rng(self.seed, stream, parent=self.key)

    def __repr__(self):
        return f"<Rng seed={self.seed} key={self.key}>"


# ------------------------
# Operands
# ------------------------
def _operand(matrix):
    if isinstance(matrix, PreferenceMatrix):
        return matrix.to_csr()
    if sp.issparse(matrix):
        return sp.csr_matrix(matrix, dtype=np.float64)
    array = np.asarray(matrix, dtype=np.float64)
    if array.ndim != 2:
        raise DimensionError("expected a 2-d matrix")
    return array


def _frobenius_sq(data):
    if sp.issparse(data):
        return float(data.multiply(data).sum())
    return float(np.einsum("ij,ij->", data, data))


def _fix_signs(left, right):
    """Make each right vector's largest-magnitude entry non-negative."""
    if right.size == 0:
        return left, right
    pivots = np.argmax(np.abs(right), axis=0)
    signs = np.where(right[pivots, np.arange(right.shape[1])] < 0, -1.0, 1.0)
    return left * signs, right * signs


def _dense_svd(a):
    if not np.all(np.isfinite(a)):
        raise SvdConvergenceError("matrix has non-finite entries")
    try:
        return la.svd(a, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except la.LinAlgError:
        logger.warning("gesdd did not converge, retrying with gesvd")
    try:
        return la.svd(a, full_matrices=False, lapack_driver="gesvd", check_finite=False)
    except la.LinAlgError as exc:
        raise SvdConvergenceError(f"bidiagonal QR failed: {exc}") from exc


def _orthonormal(block):
    q, _ = la.qr(block, mode="economic", check_finite=False)
    return q


def _randomized_svd(data, r):
    m, n = data.shape
    width = min(r + OVERSAMPLING, m, n)
    generator = np.random.default_rng(SKETCH_SEED)
    q = _orthonormal(data @ generator.standard_normal((n, width)))
    previous = None
    tolerance = float("inf")
    for sweep in range(MAX_POWER_ITERATIONS):
        q = _orthonormal(data @ _orthonormal(data.T @ q))
        estimate = la.svd(np.asarray(q.T @ data), compute_uv=False)[:r]
        if previous is not None:
            tolerance = float(np.max(np.abs(estimate - previous)) / max(estimate[0], 1e-300))
            if sweep + 1 >= POWER_ITERATIONS and tolerance <= POWER_TOLERANCE:
                break
        previous = estimate
    else:
        raise SvdConvergenceError(
            f"subspace iteration stalled after {MAX_POWER_ITERATIONS} sweeps", tolerance
        )
    small = np.asarray(q.T @ data)
    u_small, s, vt = _dense_svd(small)
    logger.debug("randomized svd converged after %d sweeps (tol %.2e)", sweep + 1, tolerance)
    return q @ u_small, s, vt


# ------------------------
# Operations
# ------------------------
def svd(matrix, r):
    """Top-r singular triplets of a PreferenceMatrix, sparse or dense matrix."""
    data = _operand(matrix)
    m, n = data.shape
    if not 1 <= r <= min(m, n):
        raise DimensionError(f"rank {r} outside [1, {min(m, n)}]")
    frobenius_sq = _frobenius_sq(data)
    if min(m, n) <= DENSE_LIMIT:
        dense = data.toarray() if sp.issparse(data) else data
        u, s, vt = _dense_svd(dense)
    else:
        logger.info("randomized svd on %dx%d, rank %d", m, n, r)
        u, s, vt = _randomized_svd(data, r)
    sigma = np.maximum(s[:r], 0.0)
    left, right = _fix_signs(u[:, :r], vt[:r].T)
    tail = max(frobenius_sq - float(np.sum(sigma**2)), 0.0)
    return SvdFactorization(
        sigma=sigma,
        left=np.ascontiguousarray(left),
        right=np.ascontiguousarray(right),
        residual_tail_sq=tail,
        frobenius_sq=frobenius_sq,
    )


def _check_cutoff(factors, k):
    if k < 0 or k > factors.r:
        raise DimensionError(f"cutoff k={k} exceeds factorization rank {factors.r}")


def _check_row(factors, i):
    if not 0 <= i < factors.m:
        raise DimensionError(f"user index {i} outside [0, {factors.m})")


def low_rank_row(factors, i, k):
    """Row i of T_{<=k} = sum_{lambda<=k} sigma u_{lambda i} v_lambda."""
    _check_cutoff(factors, k)
    _check_row(factors, i)
    weights = factors.sigma[:k] * factors.left[i, :k]
    return factors.right[:, :k] @ weights


def low_rank_entry(factors, i, j, k):
    _check_cutoff(factors, k)
    _check_row(factors, i)
    if not 0 <= j < factors.n:
        raise DimensionError(f"product index {j} outside [0, {factors.n})")
    return float(np.dot(factors.sigma[:k] * factors.left[i, :k], factors.right[j, :k]))


def low_rank_matrix(factors, k):
    """Dense T_{<=k}."""
    _check_cutoff(factors, k)
    return (factors.left[:, :k] * factors.sigma[:k]) @ factors.right[:, :k].T


def frobenius_tail(factors, k):
    """|T - T_{<=k}|^2 predicted by the spectrum."""
    _check_cutoff(factors, k)
    return float(np.sum(factors.sigma[k:] ** 2) + factors.residual_tail_sq)


def l2_sample(v, rng, size=None):
    """Draw index j with probability v_j^2 / |v|^2."""
    weights = np.square(np.asarray(v, dtype=np.float64).ravel())
    total = float(weights.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise PreconditionError("l2 sampling needs a non-zero vector")
    draws = rng.generator.choice(weights.size, size=size, p=weights / total)
    return int(draws) if size is None else draws


def export_svd_csv(factors, path):
    """One line per triplet: sigma, then u (m values), then v (n values)."""
    rows = np.hstack([factors.sigma[:, None], factors.left.T, factors.right.T])
    np.savetxt(path, rows, delimiter=",", fmt="%.17g")
    return path
