"""
Differential-privacy budgets for typical users, an empirical checker for
the (eps, delta) inequality on neighbouring matrices, and the typicalize
mechanism that pads or trims users into the typical band.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from .errors import ColdUserError, PreconditionError
from .linalg_svd import svd
from .matrix_io import as_dense, is_binary
from .models import DpBudget, DpViolationReport, FlipDirection, PreferenceMatrix, TrialCheck, TypicalizeResult
from .perturb_lab import apply_flip, sample_flip
from .recommender import gamma_tilde, recommendation_distribution, typicality

logger = logging.getLogger(__name__)

DELTA_CONSTANT = 2.01
VIOLATION_COLUMNS = ["trial", "i", "j", "direction", "worst_j", "p", "p_prime", "ratio", "violated",
                     "violating_products", "new_support_products"]


# ------------------------
# Budgets
# ------------------------
def dp_params(m, n, k, eta, gamma):
    """
    eps = ((1 + g~)/eta) k/n and delta = ((1 + g~)/eta) 2.01 k (1/m + 1/n),
    with g~ the enlarged typicality parameter.
    """
    if k < 1:
        raise PreconditionError(f"k={k} must be at least 1")
    if m < 1 or n < 1:
        raise PreconditionError(f"dimensions must be positive (got {m}x{n})")
    tilde = gamma_tilde(gamma, eta)
    scale = (1.0 + tilde) / eta
    return DpBudget(
        epsilon=scale * k / n,
        delta=scale * DELTA_CONSTANT * k * (1.0 / m + 1.0 / n),
        m=int(m), n=int(n), k=int(k), eta=float(eta), gamma=float(gamma), gamma_tilde=tilde,
    )


def compare_distributions(p, p_prime, budget):
    """
    Check p'_j <= e^eps p_j + delta for every product j.

    Returns (worst_j, ratio, violations, new_support): ratio = (p'_j - delta)/p_j
    maximized over products with p_j > 0, the number of violating products,
    and how many of those have p_j = 0 with p'_j > delta. worst_j is -1 and
    ratio NaN when p has no support.
    """
    p = np.asarray(p, dtype=np.float64)
    p_prime = np.asarray(p_prime, dtype=np.float64)
    if p.shape != p_prime.shape:
        raise PreconditionError("distributions differ in length")
    excess = p_prime - budget.delta
    support = p > 0
    violations = int(np.count_nonzero(p_prime > math.exp(budget.epsilon) * p + budget.delta))
    new_support = int(np.count_nonzero(~support & (excess > 0)))
    if not support.any():
        return -1, math.nan, violations, new_support
    ratios = np.full(p.shape, -np.inf)
    ratios[support] = excess[support] / p[support]
    worst = int(np.argmax(ratios))
    return worst, float(ratios[worst]), violations, new_support


# ------------------------
# Empirical check
# ------------------------
def dp_check(matrix, k, gamma, trials, rng, budget=None, *, direction=FlipDirection.ADD,
             threads=None):
    """
    Flip a random record of a gamma-typical user and compare the user's
    recommendation distributions on T and T' at cutoff k, both ways.

    Trials whose user turns cold on either side are skipped and counted.
    """
    if trials < 1:
        raise PreconditionError("need at least one trial")
    dense = as_dense(matrix)
    m, n = dense.shape
    report = typicality(dense, gamma)
    typical = np.flatnonzero(report.is_typical)
    if typical.size == 0:
        raise PreconditionError(f"no {gamma:g}-typical users")
    if budget is None:
        budget = dp_params(m, n, k, report.eta, gamma)
    binary = is_binary(dense)
    factors = svd(dense, k)
    logger.info("dp check on %dx%d: k=%d, %d trials, eps=%.4g delta=%.4g",
                m, n, k, trials, budget.epsilon, budget.delta)

    def one(t):
        flip = sample_flip(dense, direction, rng.child(t), rows=typical, binary=binary)
        factors_prime = svd(apply_flip(dense, flip, strict=binary), k)
        try:
            p = recommendation_distribution(factors, flip.i, k)
            p_prime = recommendation_distribution(factors_prime, flip.i, k)
        except ColdUserError as exc:
            logger.debug("trial %d skipped: %s", t, exc)
            return None
        checks = []
        for label, before, after in (("forward", p, p_prime), ("reverse", p_prime, p)):
            worst, ratio, violations, new_support = compare_distributions(before, after, budget)
            checks.append(TrialCheck(
                trial=t, i=flip.i, j=flip.j, direction=label, worst_j=worst,
                p=float(before[worst]), p_prime=float(after[worst]), ratio=ratio,
                violated=violations > 0, violating_products=violations,
                new_support_products=new_support,
            ))
        return checks

    with ThreadPoolExecutor(max_workers=threads) as pool:
        outcomes = list(pool.map(one, range(trials)))

    records = tuple(check for checks in outcomes if checks for check in checks)
    skipped = sum(1 for checks in outcomes if checks is None)
    counts = {"forward": 0, "reverse": 0}
    for check in records:
        counts[check.direction] += check.violating_products
    ratios = [c.ratio for c in records if not math.isnan(c.ratio)]
    result = DpViolationReport(
        trials=trials,
        checked_pairs=len(records) * n,
        violation_count=sum(counts.values()),
        worst_ratio=max(ratios) if ratios else float("nan"),
        direction_counts=counts,
        records=records,
        skipped_trials=skipped,
        new_support_count=sum(c.new_support_products for c in records),
    )
    if skipped:
        logger.warning("%d of %d trials skipped (cold user)", skipped, trials)
    logger.info("dp check: %d violations over %d checked pairs", result.violation_count,
                result.checked_pairs)
    return result


def violations_frame(report):
    return pd.DataFrame.from_records([vars(c) for c in report.records], columns=VIOLATION_COLUMNS)


# ------------------------
# Typicalize
# ------------------------
def typicalize(matrix, gamma, rng):
    """
    Add or remove uniformly random records until every user lies in
    [eta/(1+gamma), (1+gamma) eta], with eta frozen at the input value.
    """
    if gamma <= 0:
        raise PreconditionError(f"gamma={gamma} must be positive")
    if not isinstance(matrix, PreferenceMatrix):
        dense = as_dense(matrix)
        if not is_binary(dense):
            raise PreconditionError("typicalize needs a binary matrix")
        matrix = PreferenceMatrix.from_dense(dense)
    m, n = matrix.shape
    eta = matrix.nnz / m if m else 0.0
    if eta <= 0:
        raise PreconditionError("eta = 0: the matrix has no records")
    lo = math.ceil(eta / (1.0 + gamma) - 1e-12)
    hi = math.floor((1.0 + gamma) * eta + 1e-12)
    if lo > n:
        raise PreconditionError(f"users need {lo} records but only n={n} products exist")
    if lo > hi:
        raise PreconditionError(f"no integer record count lies in the typical band for eta={eta:.4g}")

    generator = rng.generator
    counts = matrix.row_counts
    starts = np.concatenate([[0], np.cumsum(counts)])
    rows, cols = [], []
    added = removed = 0
    for i in range(m):
        owned = matrix.cols[starts[i]:starts[i + 1]]
        if counts[i] < lo:
            free = np.setdiff1d(np.arange(n), owned, assume_unique=True)
            extra = generator.choice(free, size=lo - counts[i], replace=False)
            owned = np.concatenate([owned, extra])
            added += extra.size
        elif counts[i] > hi:
            drop = counts[i] - hi
            owned = generator.choice(owned, size=hi, replace=False)
            removed += int(drop)
        rows.append(np.full(owned.size, i, dtype=np.int64))
        cols.append(owned)
    result = PreferenceMatrix.from_pairs(
        m, n,
        np.concatenate(rows) if rows else [],
        np.concatenate(cols) if cols else [],
        row_labels=matrix.row_labels, col_labels=matrix.col_labels,
    )
    logger.info("typicalize: eta=%.4g, %d records added, %d removed", eta, added, removed)
    return TypicalizeResult(matrix=result, eta=eta, added=int(added), removed=int(removed))
