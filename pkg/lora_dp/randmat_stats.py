"""
Distribution machinery behind the semi-random eigenvector checks.

SProj(N) is the marginal of one coordinate of a uniform point on S^{N-1}:
X^2 ~ Beta(1/2, (N-1)/2) with a symmetric sign. The Marcenko-Pastur law
describes the singular values of i.i.d. noise.
"""
import logging

import numpy as np
import pandas as pd
import scipy.linalg as la
from scipy import integrate, special, stats

from .errors import DimensionError, PreconditionError
from .models import MarcenkoPastur, NoiseFloor, SprojDist, SrecResult

logger = logging.getLogger(__name__)

MIN_MOMENT_TRIALS = 1000
MOMENT_CHUNK = 100_000
HIST_COLUMNS = ["bin_left", "bin_right", "count", "pdf_at_center"]
KS_COLUMNS = ["row_index", "ks", "n_samples"]
SIDES = ("left", "right")


# ------------------------
# SProj(N)
# ------------------------
def sproj_pdf(x, N):
    """(1 - x^2)^((N-3)/2) / B(1/2, (N-1)/2) on [-1, 1], zero outside."""
    SprojDist(N)
    x = np.asarray(x, dtype=np.float64)
    inside = np.abs(x) <= 1.0
    exponent = (N - 3) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_body = exponent * np.log1p(-np.square(np.where(inside, x, 0.0)))
        if exponent == 0:
            log_body = np.zeros_like(log_body)
        out = np.exp(log_body - special.betaln(0.5, (N - 1) / 2.0))
    out = np.where(inside, out, 0.0)
    return float(out) if out.ndim == 0 else out


def sproj_cdf(x, N):
    SprojDist(N)
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    out = 0.5 + 0.5 * np.sign(x) * special.betainc(0.5, (N - 1) / 2.0, np.square(x))
    return float(out) if out.ndim == 0 else out


def sproj_mass(N):
    """Total mass of sproj_pdf by adaptive quadrature."""
    SprojDist(N)
    if N <= 3:
        # Integrable endpoint singularity for N = 2; use the algebraic weight.
        exponent = (N - 3) / 2.0
        norm = np.exp(-special.betaln(0.5, (N - 1) / 2.0))
        value, _ = integrate.quad(lambda _: norm, -1.0, 1.0, weight="alg",
                                  wvar=(exponent, exponent), epsabs=1e-12)
        return value
    width = min(10.0 / np.sqrt(N), 0.5)
    value, _ = integrate.quad(sproj_pdf, -1.0, 1.0, args=(N,), points=[-width, 0.0, width],
                              limit=200, epsabs=1e-12, epsrel=1e-10)
    return value


def sproj_sample(N, rng, size=None):
    """X = s sqrt(B), B = G1/(G1+G2) with G1 ~ Gamma(1/2), G2 ~ Gamma((N-1)/2)."""
    SprojDist(N)
    generator = rng.generator
    g1 = generator.standard_gamma(0.5, size=size)
    g2 = generator.standard_gamma((N - 1) / 2.0, size=size)
    signs = generator.choice((-1.0, 1.0), size=size)
    out = signs * np.sqrt(g1 / (g1 + g2))
    return float(out) if size is None else out


def ks_against_sproj(samples, N):
    """One-sample KS test of ``samples`` against SProj(N)."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise PreconditionError("KS test needs at least one sample")
    return stats.kstest(samples, lambda x: sproj_cdf(x, N))


# ------------------------
# Uniform sphere
# ------------------------
def sphere_sample(N, rng, size=None):
    """Normalized Gaussian vector(s); draws with zero norm are redrawn."""
    if N < 1:
        raise DimensionError(f"sphere dimension must be >= 1 (got {N})")
    count = 1 if size is None else int(size)
    generator = rng.generator
    out = generator.standard_normal((count, N))
    norms = np.linalg.norm(out, axis=1)
    while True:
        bad = ~(norms > 0) | ~np.isfinite(norms)
        if not bad.any():
            break
        out[bad] = generator.standard_normal((int(bad.sum()), N))
        norms[bad] = np.linalg.norm(out[bad], axis=1)
    out /= norms[:, None]
    return out[0] if size is None else out


def partial_norm_moments(N, r):
    """Mean and variance of the squared norm of r coordinates of a uniform point on S^{N-1}."""
    if not 1 <= r <= N:
        raise DimensionError(f"partial norm over {r} of {N} coordinates")
    return r / N, 2.0 * r * (N - r) / (N**2 * (N + 2))


def sphere_moment_report(N, trials, rng, chunk=MOMENT_CHUNK):
    """
    Empirical component statistics of uniform sphere samples with standard
    errors and their theoretical values.

    Cov[X_1^2, X_2^2] is estimated as the mean of (X_1^2 - 1/N)(X_2^2 - 1/N),
    which is unbiased because the means are known. ``stated`` repeats
    ``theory`` except for the commonly quoted square_cov value.
    """
    if trials < MIN_MOMENT_TRIALS:
        raise PreconditionError(f"need at least {MIN_MOMENT_TRIALS} trials (got {trials})")
    if N < 2:
        raise DimensionError("moment report needs N >= 2")
    r = min(2, N)
    mean_partial, var_partial = partial_norm_moments(N, r)
    theory = {
        "mean": 0.0,
        "second_moment": 1.0 / N,
        "cross": 0.0,
        "square_cov": -2.0 / (N**2 * (N + 2.0)),
        "triple": 0.0 if N >= 3 else np.nan,
        "partial_norm_sq": mean_partial,
        "partial_norm_var": var_partial,
    }
    # Closed form usually quoted for Cov[X_1^2, X_2^2]; off by a factor of 2.
    stated = dict(theory, square_cov=-2.0 / (N**2 * (N / 2.0 + 1.0)))
    sums = dict.fromkeys(theory, 0.0)
    squares = dict.fromkeys(theory, 0.0)
    done = 0
    while done < trials:
        batch = min(chunk, trials - done)
        x = sphere_sample(N, rng, size=batch)
        partial = np.sum(x[:, :r] ** 2, axis=1)
        values = {
            "mean": x[:, 0],
            "second_moment": x[:, 0] ** 2,
            "cross": x[:, 0] * x[:, 1],
            "square_cov": (x[:, 0] ** 2 - 1.0 / N) * (x[:, 1] ** 2 - 1.0 / N),
            "triple": x[:, 0] * x[:, 1] * x[:, 2] if N >= 3 else np.full(batch, np.nan),
            "partial_norm_sq": partial,
            "partial_norm_var": (partial - mean_partial) ** 2,
        }
        for name, v in values.items():
            sums[name] += float(np.sum(v))
            squares[name] += float(np.sum(v * v))
        done += batch
    records = []
    for name, expected in theory.items():
        mean = sums[name] / trials
        variance = max(squares[name] / trials - mean**2, 0.0)
        records.append({
            "statistic": name,
            "estimate": mean,
            "stderr": np.sqrt(variance / trials),
            "theory": expected,
            "stated": stated[name],
        })
    logger.info("sphere moments for N=%d over %d trials", N, trials)
    return pd.DataFrame.from_records(records, columns=["statistic", "estimate", "stderr", "theory", "stated"])


# ------------------------
# Marcenko-Pastur
# ------------------------
def mp_support(alpha):
    law = MarcenkoPastur(alpha)
    return np.sqrt(law.lambda_minus), np.sqrt(law.lambda_plus)


def mp_pdf(x, alpha):
    """sqrt((l+ - x^2)(x^2 - l-)) / (pi x) on [sqrt(l-), sqrt(l+)], zero elsewhere."""
    law = MarcenkoPastur(alpha)
    x = np.asarray(x, dtype=np.float64)
    lo, hi = np.sqrt(law.lambda_minus), np.sqrt(law.lambda_plus)
    inside = (x >= lo) & (x <= hi)
    sq = np.square(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        if law.lambda_minus == 0.0:
            # x cancels against sqrt(x^2); the x -> 0 limit is finite.
            body = np.sqrt(np.clip(law.lambda_plus - sq, 0.0, None)) / np.pi
        else:
            body = np.sqrt(np.clip((law.lambda_plus - sq) * (sq - law.lambda_minus), 0.0, None)) / (np.pi * x)
    out = np.where(inside, body, 0.0)
    return float(out) if out.ndim == 0 else out


def mp_mass(alpha):
    lo, hi = mp_support(alpha)
    value, _ = integrate.quad(mp_pdf, lo, hi, args=(alpha,), epsabs=1e-12, limit=200)
    return value


def noise_singular_values(m, n, rng, intensity=1.0):
    """Singular values of an m x n Gaussian matrix with entry scale ``intensity``, divided by intensity*sqrt(m)."""
    if m < 1 or n < 1:
        raise DimensionError(f"noise matrix needs m, n >= 1 (got {m}x{n})")
    if not intensity > 0:
        raise PreconditionError("noise intensity must be positive")
    noise = intensity * rng.generator.standard_normal((m, n))
    return la.svdvals(noise) / (intensity * np.sqrt(m))


def mp_inside_fraction(values, alpha, slack=0.0):
    """Share of scaled singular values inside the support widened by ``slack`` on both ends."""
    lo, hi = mp_support(alpha)
    values = np.asarray(values, dtype=np.float64)
    return float(np.mean((values >= lo - slack) & (values <= hi + slack)))


def noise_floor(m, n, intensity):
    """sqrt(m)(sqrt(alpha) - 1) I, the lower edge of the noise singular values."""
    if m < 1 or n < 1:
        raise DimensionError(f"noise floor needs m, n >= 1 (got {m}x{n})")
    if n <= m:
        logger.warning("noise floor degenerate for n <= m (%dx%d)", m, n)
        return NoiseFloor(value=0.0, degenerate=True)
    alpha = n / m
    return NoiseFloor(value=float(np.sqrt(m) * (np.sqrt(alpha) - 1.0) * intensity), degenerate=False)


# ------------------------
# SREC histograms
# ------------------------
def srec_test(factors, which="right", sample_rows=None, bins=50):
    """
    Compare singular-vector rows of a factorization against SProj.

    Rows of U (``which="left"``) are tested against SProj(m), rows of V
    against SProj(n). Only the r computed components are available, so
    the squared row norm is compared with its partial-mass expectation r/N.
    """
    if which not in SIDES:
        raise PreconditionError(f"which must be one of {SIDES}")
    if factors.r < 2:
        raise PreconditionError(f"SREC test needs rank >= 2 (got {factors.r})")
    vectors = factors.left if which == "left" else factors.right
    N = vectors.shape[0]
    rows = np.arange(N) if sample_rows is None else np.asarray(sample_rows, dtype=np.int64)
    if rows.size == 0:
        raise PreconditionError("no rows to test")
    if rows.min() < 0 or rows.max() >= N:
        raise DimensionError(f"sampled row outside [0, {N})")

    selected = vectors[rows]
    pooled = selected.ravel()
    reach = min(1.0, float(np.max(np.abs(pooled))) or 1.0)
    counts, edges = np.histogram(pooled, bins=bins, range=(-reach, reach))
    centers = 0.5 * (edges[:-1] + edges[1:])
    histogram = pd.DataFrame({
        "bin_left": edges[:-1],
        "bin_right": edges[1:],
        "count": counts,
        "pdf_at_center": sproj_pdf(centers, N),
    }, columns=HIST_COLUMNS)
    ks = pd.DataFrame({
        "row_index": rows,
        "ks": [ks_against_sproj(row, N).statistic for row in selected],
        "n_samples": selected.shape[1],
    }, columns=KS_COLUMNS)
    pooled_ks = float(ks_against_sproj(pooled, N).statistic)
    partial = float(np.mean(np.sum(selected**2, axis=1)))
    logger.info("srec %s rows: pooled KS %.4f over %d components", which, pooled_ks, pooled.size)
    return SrecResult(
        histogram=histogram, ks=ks, pooled_ks=pooled_ks, partial_mass=partial,
        expected_partial_mass=factors.r / N, N=N,
    )
