"""
Neighbour-flip experiments.

A flip toggles one user-product record. The lab measures the change
Delta_{<=k} = T'_{<=k} - T_{<=k} by brute force (two SVDs and a dense
difference per cutoff) and compares it against the low-rank perturbation
predictor and the bounds f(k) = k(1/m + 1/n), Sigma(k) = sqrt(2.01k(1/m^2 + 1/n^2)).

On binary matrices a flip must agree with the current entry. Real-valued
test beds take flips as additive unit perturbations +-e_i e_j^T.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
from scipy.optimize import least_squares

from .errors import DimensionError, PreconditionError
from .linalg_svd import CLUSTER_TOLERANCE, low_rank_matrix, svd
from .matrix_io import as_dense, is_binary
from .models import (
    FlipDirection,
    NeighbourFlip,
    PerturbationMeasurement,
    PerturbationPrediction,
    PreferenceMatrix,
)

logger = logging.getLogger(__name__)

CHEBYSHEV_T = math.sqrt(20.0)  # 95% band
CORE_COLUMNS = ["k", "f_k", "sigma_bound", "delta_mean", "delta_max", "outside_frac", "argmax_frac"]
ROW_COLUMNS = ["k", "row_change_mean", "k_over_n", "bound2", "row_change_max"]
GLOBAL_COLUMNS = ["k", "global_mean", "row_mean", "delta_mean", "global_ge_row_frac"]
TRIAL_COLUMNS = [
    "trial", "i", "j", "direction", "k", "delta_k", "delta_ij_k", "argmax_at_flip",
    "f_k", "sigma_k_bound", "row_change_sq", "global_change", "capture_fraction",
]


def f_k(k, m, n):
    return k * (1.0 / m + 1.0 / n)


def sigma_bound(k, m, n):
    return math.sqrt(2.01 * k * (1.0 / m**2 + 1.0 / n**2))


# ------------------------
# Flips
# ------------------------
def flip_entry(matrix, flip):
    """Toggle one record of a binary PreferenceMatrix."""
    if not (0 <= flip.i < matrix.m and 0 <= flip.j < matrix.n):
        raise DimensionError(f"flip ({flip.i}, {flip.j}) outside {matrix.m}x{matrix.n}")
    present = matrix.contains(flip.i, flip.j)
    if flip.direction is FlipDirection.ADD:
        if present:
            raise PreconditionError(f"cannot add ({flip.i}, {flip.j}): entry already 1")
        rows = np.append(matrix.rows, flip.i)
        cols = np.append(matrix.cols, flip.j)
    else:
        if not present:
            raise PreconditionError(f"cannot remove ({flip.i}, {flip.j}): entry is 0")
        keep = ~((matrix.rows == flip.i) & (matrix.cols == flip.j))
        rows, cols = matrix.rows[keep], matrix.cols[keep]
    return PreferenceMatrix.from_pairs(
        matrix.m, matrix.n, rows, cols,
        row_labels=matrix.row_labels, col_labels=matrix.col_labels,
    )


def apply_flip(dense, flip, strict=None):
    """Dense T' for a flip; ``strict`` defaults to whether T is binary."""
    m, n = dense.shape
    if not (0 <= flip.i < m and 0 <= flip.j < n):
        raise DimensionError(f"flip ({flip.i}, {flip.j}) outside {m}x{n}")
    if strict is None:
        strict = is_binary(dense)
    expected = 0.0 if flip.direction is FlipDirection.ADD else 1.0
    if strict and dense[flip.i, flip.j] != expected:
        raise PreconditionError(
            f"flip {flip.direction.value} inconsistent with T[{flip.i},{flip.j}]={dense[flip.i, flip.j]:g}"
        )
    flipped = dense.copy()
    flipped[flip.i, flip.j] += flip.sign
    return flipped


def sample_flip(dense, direction, rng, rows=None, binary=None):
    """Uniform admissible flip, optionally restricted to the given users."""
    if binary is None:
        binary = is_binary(dense)
    m, n = dense.shape
    users = np.arange(m) if rows is None else np.asarray(rows, dtype=np.int64)
    if users.size == 0:
        raise PreconditionError("no admissible flips: empty user set")
    if binary:
        target = 0.0 if direction is FlipDirection.ADD else 1.0
        candidates = np.flatnonzero(dense[users] == target)
        if candidates.size == 0:
            raise PreconditionError(f"no admissible {direction.value} flips")
        pick = int(rng.generator.choice(candidates))
        return NeighbourFlip(int(users[pick // n]), int(pick % n), direction)
    pick = int(rng.generator.integers(users.size * n))
    return NeighbourFlip(int(users[pick // n]), int(pick % n), direction)


# ------------------------
# Prediction
# ------------------------
def _nondegenerate(sigma):
    return sigma > CLUSTER_TOLERANCE * (sigma[0] if sigma.size else 0.0)


def _form_residual(alpha, beta, factors, i, j, sign, live):
    """Row i and column j (minus its row-i entry) of Delta_form - sign e_i e_j^T."""
    U, V, s = factors.left, factors.right, factors.sigma
    cross = float(np.sum(alpha[live] * beta[live] / s[live]))
    column = U @ beta
    row = V @ alpha
    row[j] += column[i] + cross - sign
    return np.concatenate([row, np.delete(column, i)])


def _form_jacobian(alpha, beta, factors, i, j, live):
    U, V, s = factors.left, factors.right, factors.sigma
    r = s.size
    n = V.shape[0]
    jac = np.zeros((n + U.shape[0] - 1, 2 * r))
    jac[:n, :r] = V
    jac[j, :r] += np.where(live, beta / np.where(live, s, 1.0), 0.0)
    jac[j, r:] = U[i] + np.where(live, alpha / np.where(live, s, 1.0), 0.0)
    jac[n:, r:] = np.delete(U, i, axis=0)
    return jac


def predict_perturbation(factors, flip, k):
    """
    Low-rank perturbation predictor for a single-entry flip.

    alpha_tilde = C v_{lambda j}, beta_tilde = C u_{lambda i} (C = +-1), and the
    predicted change at the flipped entry is
    |sum_{lambda<=k} C(v^2 + u^2) + u v / sigma|. Zero singular values drop
    their 1/sigma part and are counted in ``degenerate_terms``.

    ``capture_fraction`` (full-rank factorizations only) is
    1 - |Delta_form - dT|_F with the form's coefficients refined by least
    squares from the boxed solution; ``boxed_capture_fraction`` uses the
    boxed coefficients as they are.
    """
    if k < 0 or k > factors.r:
        raise DimensionError(f"k={k} exceeds factorization rank {factors.r}")
    i, j, sign = flip.i, flip.j, flip.sign
    if not (0 <= i < factors.m and 0 <= j < factors.n):
        raise DimensionError(f"flip ({i}, {j}) outside {factors.m}x{factors.n}")
    s = factors.sigma
    u_i = factors.left[i]
    v_j = factors.right[j]
    alpha = sign * v_j
    beta = sign * u_i
    live = _nondegenerate(s)
    degenerate = int(np.count_nonzero(~live))

    scale = CLUSTER_TOLERANCE * max(s[0] if s.size else 0.0, 1.0)
    appended = bool(np.all(np.abs(s[live] * u_i[live]) <= scale)
                    and np.all(np.abs(s[live] * v_j[live]) <= scale))
    if appended:
        # Row i and column j of T are empty: the flip becomes a new triplet (1, e_i, e_j).
        position = int(np.count_nonzero(s > 1.0))
        delta_pred = 1.0 if k > position else 0.0
        capture = boxed = 1.0 if factors.is_full_rank else float("nan")
        logger.debug("flip (%d, %d) hits an empty row and column; appending rank-1 term", i, j)
        return PerturbationPrediction(
            k=k, alpha_tilde=alpha, beta_tilde=beta, delta_pred_ij=delta_pred,
            capture_fraction=capture, boxed_capture_fraction=boxed,
            degenerate_terms=degenerate, appended_rank_one=True,
        )

    head = slice(0, k)
    linear = sign * (v_j[head] ** 2 + u_i[head] ** 2)
    quadratic = np.where(live[head], u_i[head] * v_j[head] / np.where(live[head], s[head], 1.0), 0.0)
    delta_pred = abs(float(np.sum(linear + quadratic)))
    if degenerate and k:
        logger.debug("%d zero singular values skipped in the 1/sigma terms", degenerate)

    capture = boxed = float("nan")
    if factors.is_full_rank:
        boxed = 1.0 - float(np.linalg.norm(_form_residual(alpha, beta, factors, i, j, sign, live)))
        r = s.size
        fit = least_squares(
            lambda x: _form_residual(x[:r], x[r:], factors, i, j, sign, live),
            np.concatenate([alpha, beta]),
            jac=lambda x: _form_jacobian(x[:r], x[r:], factors, i, j, live),
            method="trf",
        )
        capture = 1.0 - float(np.linalg.norm(fit.fun))
    return PerturbationPrediction(
        k=k, alpha_tilde=alpha, beta_tilde=beta, delta_pred_ij=delta_pred,
        capture_fraction=capture, boxed_capture_fraction=boxed,
        degenerate_terms=degenerate,
    )


# ------------------------
# Measurement
# ------------------------
def _check_k_list(k_list, limit):
    k_list = sorted({int(k) for k in k_list})
    if not k_list:
        raise PreconditionError("empty k list")
    if k_list[0] < 0 or k_list[-1] > limit:
        raise DimensionError(f"k values must lie in [0, {limit}]")
    return k_list


def measure_perturbation(matrix, flip, k_list, svd_rank=None, *, factors=None,
                         with_capture=True):
    """
    Brute-force Delta_{<=k} for every k in ``k_list``.

    ``factors`` may carry a precomputed factorization of T (rank >= svd_rank)
    so sweeps factor T once.
    """
    dense = as_dense(matrix)
    m, n = dense.shape
    full = min(m, n)
    rank = full if svd_rank is None else int(svd_rank)
    k_list = _check_k_list(k_list, rank)
    flipped = apply_flip(dense, flip)
    if factors is None or factors.r < rank:
        factors = svd(dense, rank)
    factors_prime = svd(flipped, rank)

    capture = float("nan")
    if with_capture and rank == full:
        capture = predict_perturbation(factors, flip, full).capture_fraction

    out = []
    for k in k_list:
        delta = low_rank_matrix(factors_prime, k) - low_rank_matrix(factors, k)
        magnitude = np.abs(delta)
        peak = int(np.argmax(magnitude))
        delta_k = float(magnitude.flat[peak])
        out.append(PerturbationMeasurement(
            k=k,
            delta_k=delta_k,
            delta_ij_k=float(magnitude[flip.i, flip.j]),
            argmax_at_flip=bool(k > 0 and divmod(peak, n) == (flip.i, flip.j)),
            f_k=f_k(k, m, n),
            sigma_k_bound=sigma_bound(k, m, n),
            row_change_sq=float(np.dot(delta[flip.i], delta[flip.i])),
            global_change=float(np.linalg.norm(delta)),
            capture_fraction=capture,
        ))
    return out


def perturbation_trials(matrix, k_list, trials, rng, *, direction=FlipDirection.ADD,
                        svd_rank=None, with_capture=False, threads=None):
    """
    Run ``trials`` random flips; trial t draws its flip from ``rng.child(t)``.

    Returns a list of (flip, measurements) ordered by trial index regardless
    of how many worker threads ran them.
    """
    if trials < 1:
        raise PreconditionError("need at least one trial")
    dense = as_dense(matrix)
    m, n = dense.shape
    rank = min(m, n) if svd_rank is None else int(svd_rank)
    k_list = _check_k_list(k_list, rank)
    binary = is_binary(dense)
    factors = svd(dense, rank)
    logger.info("perturbation sweep on %dx%d: %d trials, k in [%d, %d]",
                m, n, trials, k_list[0], k_list[-1])

    def one(t):
        flip = sample_flip(dense, direction, rng.child(t), binary=binary)
        return flip, measure_perturbation(dense, flip, k_list, rank, factors=factors,
                                          with_capture=with_capture)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(trials)))


def trials_frame(results):
    records = [
        {"trial": t, "i": flip.i, "j": flip.j, "direction": flip.direction.value, **vars(meas)}
        for t, (flip, measurements) in enumerate(results)
        for meas in measurements
    ]
    return pd.DataFrame.from_records(records, columns=TRIAL_COLUMNS)


# ------------------------
# Sweeps
# ------------------------
def core_lemma_sweep(matrix, k_list, trials, rng, *, band_t=CHEBYSHEV_T, threads=None,
                     direction=FlipDirection.ADD):
    """Mean/max delta(k) against f(k) and the Chebyshev band f(k) +- t Sigma(k)."""
    frame = trials_frame(perturbation_trials(matrix, k_list, trials, rng,
                                             direction=direction, threads=threads))
    frame["outside"] = (frame["delta_k"] - frame["f_k"]).abs() >= band_t * frame["sigma_k_bound"]
    grouped = frame.groupby("k", sort=True)
    return pd.DataFrame({
        "k": grouped["k"].first(),
        "f_k": grouped["f_k"].first(),
        "sigma_bound": grouped["sigma_k_bound"].first(),
        "delta_mean": grouped["delta_k"].mean(),
        "delta_max": grouped["delta_k"].max(),
        "outside_frac": grouped["outside"].mean(),
        "argmax_frac": grouped["argmax_at_flip"].mean(),
    }).reset_index(drop=True)[CORE_COLUMNS]


def row_norm_sweep(matrix, k_list, trials, rng, *, threads=None, direction=FlipDirection.ADD):
    """|(Delta_{<=k})_i|^2 against k/n and the absolute bound 2."""
    n = matrix.shape[1]
    frame = trials_frame(perturbation_trials(matrix, k_list, trials, rng,
                                             direction=direction, threads=threads))
    grouped = frame.groupby("k", sort=True)
    out = pd.DataFrame({
        "k": grouped["k"].first(),
        "row_change_mean": grouped["row_change_sq"].mean(),
        "row_change_max": grouped["row_change_sq"].max(),
    }).reset_index(drop=True)
    out["k_over_n"] = out["k"] / n
    out["bound2"] = 2.0
    return out[ROW_COLUMNS]


def global_norm_sweep(matrix, k_list, trials, rng, *, threads=None, direction=FlipDirection.ADD):
    """Classical (whole-matrix) against quantum (row) change per cutoff."""
    frame = trials_frame(perturbation_trials(matrix, k_list, trials, rng,
                                             direction=direction, threads=threads))
    frame["row_change"] = np.sqrt(frame["row_change_sq"])
    frame["global_ge_row"] = frame["global_change"] >= frame["row_change"] - 1e-12
    grouped = frame.groupby("k", sort=True)
    return pd.DataFrame({
        "k": grouped["k"].first(),
        "global_mean": grouped["global_change"].mean(),
        "row_mean": grouped["row_change"].mean(),
        "delta_mean": grouped["delta_k"].mean(),
        "global_ge_row_frac": grouped["global_ge_row"].mean(),
    }).reset_index(drop=True)[GLOBAL_COLUMNS]
