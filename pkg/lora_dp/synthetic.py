"""
Synthetic test beds.

``planted_matrix`` builds sum_lambda sigma_lambda g_lambda h_lambda^T from
Haar-distributed g, h plus i.i.d. Gaussian noise. Gaussian ensembles have
uniformly distributed singular vectors, so these matrices satisfy the
semi-random eigenvector condition by construction.
"""
import numpy as np
import scipy.linalg as la

from .errors import DimensionError, PreconditionError

# Data singular values scale with sqrt(mn / rank), which keeps entries O(1).
DEFAULT_SIGNAL = 0.5
DEFAULT_NOISE = 0.2


def haar_orthogonal(rows, cols, rng):
    """First ``cols`` columns of a Haar-random orthogonal rows x rows matrix."""
    if cols > rows:
        raise DimensionError(f"cannot draw {cols} orthonormal columns in R^{rows}")
    gaussian = rng.generator.standard_normal((rows, cols))
    q, r = la.qr(gaussian, mode="economic")
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def gaussian_matrix(m, n, rng, scale=1.0):
    return scale * rng.generator.standard_normal((m, n))


def planted_spectrum(m, n, rank, signal=DEFAULT_SIGNAL):
    """Linearly spaced data singular values from 2s to roughly s, s = signal*sqrt(mn/rank)."""
    base = signal * np.sqrt(m * n / rank)
    return base * (2.0 - np.arange(rank) / rank)


def geometric_spectrum(top, rank, decay):
    """Data singular values top, top*decay, ..., top*decay^(rank-1)."""
    if not 0 < decay < 1:
        raise PreconditionError(f"decay {decay} outside (0, 1)")
    return top * decay ** np.arange(rank)


def planted_matrix(m, n, rank, rng, signal=DEFAULT_SIGNAL, noise=DEFAULT_NOISE, spectrum=None):
    """
    Planted rank-``rank`` matrix plus N(0, noise^2) entries. ``spectrum``
    overrides the linearly spaced data singular values.
    """
    if not 1 <= rank <= min(m, n):
        raise DimensionError(f"planted rank {rank} outside [1, {min(m, n)}]")
    if noise < 0:
        raise PreconditionError("noise intensity must be non-negative")
    if spectrum is None:
        spectrum = planted_spectrum(m, n, rank, signal)
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.shape != (rank,) or np.any(spectrum <= 0):
        raise PreconditionError(f"spectrum needs {rank} positive values")
    left = haar_orthogonal(m, rank, rng)
    right = haar_orthogonal(n, rank, rng)
    data = (left * spectrum) @ right.T
    return data + gaussian_matrix(m, n, rng, scale=noise)


def rank_one(m, n, i=0, j=0, scale=1.0):
    out = np.zeros((m, n))
    out[i, j] = scale
    return out
