# ------------------------
# Domain records shared by the lab modules
# ------------------------
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError


def _frozen(array, dtype):
    out = np.ascontiguousarray(array, dtype=dtype)
    out.setflags(write=False)
    return out


# ------------------------
# Preference data
# ------------------------
@dataclass(frozen=True, eq=False)
class PreferenceMatrix:
    """
    Sparse binary m x n user-product matrix.

    Entries are kept as two parallel index arrays sorted by (row, col);
    every stored pair holds the value 1. Optional label arrays map dense
    indices back to the identifiers of the source dataset.
    """

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    row_labels: np.ndarray | None = None
    col_labels: np.ndarray | None = None

    @classmethod
    def from_pairs(cls, m, n, rows, cols, row_labels=None, col_labels=None):
        """Validate, deduplicate and sort (row, col) pairs."""
        m, n = int(m), int(n)
        if m < 0 or n < 0:
            raise DimensionError(f"negative shape {m}x{n}")
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if rows.shape != cols.shape:
            raise DimensionError("row and column index arrays differ in length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= m:
                raise DimensionError(f"row index outside [0, {m})")
            if cols.min() < 0 or cols.max() >= n:
                raise DimensionError(f"column index outside [0, {n})")
        linear = np.unique(rows * max(n, 1) + cols)
        return cls(
            m=m,
            n=n,
            rows=_frozen(linear // max(n, 1), np.int64),
            cols=_frozen(linear % max(n, 1), np.int64),
            row_labels=None if row_labels is None else _frozen(row_labels, None),
            col_labels=None if col_labels is None else _frozen(col_labels, None),
        )

    @classmethod
    def from_dense(cls, array):
        array = np.asarray(array)
        if array.ndim != 2:
            raise DimensionError("expected a 2-d array")
        rows, cols = np.nonzero(array)
        return cls.from_pairs(array.shape[0], array.shape[1], rows, cols)

    @property
    def shape(self):
        return (self.m, self.n)

    @property
    def nnz(self):
        return int(self.rows.size)

    @cached_property
    def row_counts(self):
        return _frozen(np.bincount(self.rows, minlength=self.m), np.int64)

    @cached_property
    def entries(self):
        return frozenset(zip(self.rows.tolist(), self.cols.tolist()))

    def contains(self, i, j):
        pos = np.searchsorted(self.rows * max(self.n, 1) + self.cols, i * max(self.n, 1) + j)
        return bool(pos < self.nnz and self.rows[pos] == i and self.cols[pos] == j)

    def to_csr(self):
        data = np.ones(self.nnz, dtype=np.float64)
        return sp.csr_matrix((data, (self.rows, self.cols)), shape=self.shape)

    def to_dense(self):
        dense = np.zeros(self.shape, dtype=np.float64)
        dense[self.rows, self.cols] = 1.0
        return dense

    def __eq__(self, other):
        if not isinstance(other, PreferenceMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
        )

    def __hash__(self):
        return hash((self.m, self.n, self.rows.tobytes(), self.cols.tobytes()))

    def __repr__(self):
        return f"<PreferenceMatrix {self.m}x{self.n} nnz={self.nnz}>"


@dataclass(frozen=True)
class DatasetStats:
    m: int
    n: int
    nnz: float
    eta: float      # average records per user
    density: float  # nnz / (m n)

    def line(self):
        return f"m={self.m} n={self.n} eta={self.eta:.1f} density={self.density:.3f}"


# ------------------------
# Factorizations
# ------------------------
@dataclass(frozen=True, eq=False)
class SvdFactorization:
    """
    Top-r singular triplets of an m x n matrix.

    ``left`` is m x r and ``right`` is n x r; column lambda holds u_lambda and
    v_lambda. ``residual_tail_sq`` is |T|^2 minus the retained sigma^2.
    """

    sigma: np.ndarray
    left: np.ndarray
    right: np.ndarray
    residual_tail_sq: float
    frobenius_sq: float

    @property
    def r(self):
        return int(self.sigma.size)

    @property
    def m(self):
        return int(self.left.shape[0])

    @property
    def n(self):
        return int(self.right.shape[0])

    @property
    def is_full_rank(self):
        return self.r == min(self.m, self.n)


# ------------------------
# Neighbouring databases
# ------------------------
class FlipDirection(enum.Enum):
    ADD = "add"        # 0 -> 1
    REMOVE = "remove"  # 1 -> 0

    @property
    def sign(self):
        return 1.0 if self is FlipDirection.ADD else -1.0

    @property
    def reverse(self):
        return FlipDirection.REMOVE if self is FlipDirection.ADD else FlipDirection.ADD


@dataclass(frozen=True)
class NeighbourFlip:
    i: int
    j: int
    direction: FlipDirection = FlipDirection.ADD

    @property
    def sign(self):
        return self.direction.sign

    def reversed(self):
        return NeighbourFlip(self.i, self.j, self.direction.reverse)


@dataclass(frozen=True)
class PerturbationMeasurement:
    k: int
    delta_k: float
    delta_ij_k: float
    argmax_at_flip: bool
    f_k: float
    sigma_k_bound: float
    row_change_sq: float
    global_change: float
    capture_fraction: float = float("nan")


@dataclass(frozen=True)
class PerturbationPrediction:
    k: int
    alpha_tilde: np.ndarray
    beta_tilde: np.ndarray
    delta_pred_ij: float
    capture_fraction: float
    boxed_capture_fraction: float
    degenerate_terms: int = 0
    appended_rank_one: bool = False


# ------------------------
# Recommendation and privacy
# ------------------------
@dataclass(frozen=True, eq=False)
class TypicalityReport:
    eta: float
    gamma: float
    gamma_tilde: float | None
    row_norm_sq: np.ndarray
    is_typical: np.ndarray

    @property
    def typical_count(self):
        return int(np.count_nonzero(self.is_typical))

    @property
    def typical_fraction(self):
        return self.typical_count / max(self.is_typical.size, 1)

    @property
    def per_user(self):
        """(row_norm_sq, is_typical) per user."""
        return list(zip(self.row_norm_sq.tolist(), self.is_typical.tolist()))


@dataclass(frozen=True)
class DpBudget:
    epsilon: float
    delta: float
    m: int
    n: int
    k: int
    eta: float
    gamma: float
    gamma_tilde: float


@dataclass(frozen=True)
class TrialCheck:
    trial: int
    i: int
    j: int
    direction: str
    worst_j: int
    p: float
    p_prime: float
    ratio: float
    violated: bool
    violating_products: int = 0
    new_support_products: int = 0


@dataclass(frozen=True)
class DpViolationReport:
    trials: int
    checked_pairs: int
    violation_count: int
    worst_ratio: float
    direction_counts: dict = field(default_factory=dict)
    records: tuple = ()
    skipped_trials: int = 0
    new_support_count: int = 0

    @property
    def violation_rate(self):
        """Share of (trial, direction, product) pairs that break the inequality."""
        return self.violation_count / self.checked_pairs if self.checked_pairs else 0.0

    @property
    def violating_trials(self):
        return len({r.trial for r in self.records if r.violated})


@dataclass(frozen=True)
class TypicalizeResult:
    matrix: PreferenceMatrix
    eta: float
    added: int
    removed: int

    @property
    def modified_cells(self):
        return self.added + self.removed


# ------------------------
# Sketches
# ------------------------
@dataclass(frozen=True, eq=False)
class FkvSketch:
    q: int
    row_ids: np.ndarray
    row_probs: np.ndarray
    col_ids: np.ndarray
    col_probs: np.ndarray
    W: np.ndarray
    sigma_hat: np.ndarray
    V_hat: np.ndarray  # n x k, one reconstructed right vector per column
    K: float
    eps_bar: float
    sigma: float
    normalizer: str = "sketch"

    @property
    def k(self):
        return int(self.sigma_hat.size)

    @property
    def coherence(self):
        gram = self.V_hat.T @ self.V_hat
        off = gram - np.diag(np.diag(gram))
        return float(np.abs(off).max()) if off.size else 0.0


@dataclass(frozen=True, eq=False)
class FkvQuality:
    k: int
    projector_residual: float
    angles: np.ndarray


# ------------------------
# Random-matrix laws
# ------------------------
@dataclass(frozen=True)
class SprojDist:
    """Law of one coordinate of a uniform point on the unit sphere in R^N."""

    N: int

    def __post_init__(self):
        if self.N < 2:
            raise DimensionError(f"SProj needs N >= 2 (got {self.N})")


@dataclass(frozen=True)
class MarcenkoPastur:
    """Singular-value law of i.i.d. noise with aspect ratio alpha = n/m, in units of sigma*sqrt(m)."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise DimensionError(f"aspect ratio must be positive (got {self.alpha})")

    @property
    def lambda_minus(self):
        return (1.0 - self.alpha**0.5) ** 2

    @property
    def lambda_plus(self):
        return (1.0 + self.alpha**0.5) ** 2


@dataclass(frozen=True)
class NoiseFloor:
    value: float
    degenerate: bool  # n <= m, no positive floor


@dataclass(frozen=True, eq=False)
class SrecResult:
    histogram: object      # DataFrame bin_left,bin_right,count,pdf_at_center
    ks: object             # DataFrame row_index,ks,n_samples
    pooled_ks: float
    partial_mass: float    # mean squared norm of the sampled rows
    expected_partial_mass: float
    N: int
