import numpy as np
import pytest

from lora_dp.errors import DimensionError, EmptyFilterError, PreconditionError
from lora_dp.linalg_svd import Rng, svd
from lora_dp.models import FkvSketch
from lora_dp.recommender import recommend, recommendation_distribution
from lora_dp.sketch_fkv import (
    export_sketch_csv,
    fkv_quality,
    fkv_row,
    modfkv,
    sampled_rows,
    sketch_size,
)
from lora_dp.synthetic import planted_matrix


@pytest.fixture
def rank_one():
    generator = np.random.default_rng(11)
    u = generator.standard_normal(40)
    v = generator.standard_normal(60)
    return np.outer(u, v), v / np.linalg.norm(v)



def block_matrix(seed, row_blocks=(10, 10, 10), col_blocks=(13, 13, 14)):
    """Block-diagonal matrix with one rank-one block per user group, equal block mass."""
    generator = np.random.default_rng(seed)
    out = np.zeros((sum(row_blocks), sum(col_blocks)))
    r0 = c0 = 0
    for rows, cols in zip(row_blocks, col_blocks):
        block = np.outer(generator.uniform(0.5, 2.0, rows), generator.standard_normal(cols))
        out[r0:r0 + rows, c0:c0 + cols] = block / np.linalg.norm(block)
        r0, c0 = r0 + rows, c0 + cols
    return out

# ------------------------
# Test sketch size
# ------------------------
def test_sketch_size_arithmetic():
    K, eps_bar, q = sketch_size(100.0, 5.0, 0.5, 0.5)
    assert K == 4.0
    assert eps_bar == 0.125
    assert q == 16384
    assert sketch_size(100.0, 5.0, 0.5, 0.5, q_cap=200)[2] == 200


# ------------------------
# Test ModFKV
# ------------------------
@pytest.mark.parametrize("normalizer", ["sketch", "exact"])
def test_rank_one_recovery(rank_one, normalizer):
    matrix, direction = rank_one
    sketch = modfkv(matrix, 1.0, 0.5, 0.5, Rng(4), q_cap=200, normalizer=normalizer)
    assert sketch.q == 200
    assert sketch.k == 1
    assert abs(float(sketch.V_hat[:, 0] @ direction)) > 0.99


def test_sketch_is_deterministic(rank_one):
    matrix, _ = rank_one
    a = modfkv(matrix, 1.0, 0.5, 0.5, Rng(4), q_cap=50)
    b = modfkv(matrix, 1.0, 0.5, 0.5, Rng(4), q_cap=50)
    assert a.row_ids.tolist() == b.row_ids.tolist()
    assert np.array_equal(a.V_hat, b.V_hat)
    assert sampled_rows(a, matrix).shape == (50, 60)


def test_threshold_filters_everything(rank_one):
    matrix, _ = rank_one
    with pytest.raises(EmptyFilterError):
        modfkv(matrix, 1e9, 0.5, 0.5, Rng(4), q_cap=50)


def test_bad_parameters(rank_one):
    matrix, _ = rank_one
    with pytest.raises(PreconditionError):
        modfkv(matrix, 0.0, 0.5, 0.5, Rng(4))
    with pytest.raises(PreconditionError):
        modfkv(matrix, 1.0, 1.5, 0.5, Rng(4))
    with pytest.raises(PreconditionError):
        modfkv(matrix, 1.0, 0.5, 0.5, Rng(4), normalizer="other")
    with pytest.raises(PreconditionError):
        modfkv(np.zeros((4, 4)), 1.0, 0.5, 0.5, Rng(4))


def test_fkv_row_and_backend(rank_one):
    matrix, _ = rank_one
    sketch = modfkv(matrix, 1.0, 0.5, 0.5, Rng(4), q_cap=100)
    row = fkv_row(sketch, matrix, 3)
    assert np.allclose(row, sketch.V_hat @ (sketch.V_hat.T @ matrix[3]))
    assert np.allclose(row, matrix[3], atol=1e-8)
    j = recommend(matrix, 3, 1, Rng(1), backend="fkv", sketch=sketch)
    assert 0 <= j < 60
    with pytest.raises(DimensionError):
        fkv_row(sketch, matrix, 40)


def test_quality_bounds(rank_one, tmp_path):
    matrix, _ = rank_one
    sketch = modfkv(matrix, 1.0, 0.5, 0.5, Rng(4), q_cap=100)
    quality = fkv_quality(sketch, matrix, 1)
    assert quality.projector_residual < 1e-6
    assert quality.angles[0] < 1e-6
    with pytest.raises(DimensionError):
        fkv_quality(sketch, matrix, 2)
    rows = np.loadtxt(export_sketch_csv(sketch, tmp_path / "fkv.csv"), delimiter=",", ndmin=2)
    assert rows.shape == (1, 61)


def test_orthogonal_spans_have_unit_residual():
    matrix = np.diag([3.0, 2.0, 1.0, 0.0])
    matrix = np.hstack([matrix, np.zeros((4, 2))])
    v_hat = np.zeros((6, 1))
    v_hat[5, 0] = 1.0
    sketch = FkvSketch(
        q=1, row_ids=np.array([0]), row_probs=np.array([1.0]), col_ids=np.array([0]),
        col_probs=np.array([1.0]), W=np.eye(1), sigma_hat=np.array([1.0]), V_hat=v_hat,
        K=1.0, eps_bar=1.0, sigma=1.0,
    )
    quality = fkv_quality(sketch, matrix, 1)
    assert quality.projector_residual == pytest.approx(1.0)
    assert quality.angles[0] == pytest.approx(np.pi / 2)


@pytest.mark.parametrize("seed", range(5))
def test_full_fidelity_backend_matches_exact(seed):
    matrix = block_matrix(seed)
    m, n = matrix.shape
    sketch = modfkv(matrix, 1e-6, 0.5, 0.5, Rng(seed), normalizer="exact")
    assert sketch.q == min(m, n)
    assert sketch.k == 3
    factors = svd(matrix, 3)
    for i in range(m):
        exact = recommendation_distribution(factors, i, 3)
        row = fkv_row(sketch, matrix, i)
        approx = row**2 / np.sum(row**2)
        assert 0.5 * np.abs(exact - approx).sum() < 0.05
    assert 0 <= recommend(matrix, 0, 3, Rng(seed, 1), backend="fkv", sketch=sketch) < n


def test_row_sketch_is_unbiased():
    matrix = np.random.default_rng(19).standard_normal((20, 30))
    gram = matrix.T @ matrix
    total = np.zeros_like(gram)
    for t in range(200):
        sketch = modfkv(matrix, 1.0, 0.5, 0.5, Rng(20, t), q_cap=20)
        rows = sampled_rows(sketch, matrix)
        assert rows.shape == (20, 30)
        total += rows.T @ rows
    assert np.linalg.norm(total / 200 - gram) < 0.1 * np.linalg.norm(gram)


@pytest.mark.slow
def test_residual_shrinks_with_sketch_size():
    medians = []
    for q in (50, 200, 800):
        residuals = []
        for seed in range(20):
            matrix = planted_matrix(100, 150, 5, Rng(seed))
            factors = svd(matrix, 5)
            sketch = modfkv(matrix, 15.0, 0.5, 0.5, Rng(seed, q), q_cap=q, normalizer="exact")
            residuals.append(fkv_quality(sketch, matrix, min(5, sketch.k), factors).projector_residual)
        medians.append(np.median(residuals))
    assert medians[0] >= medians[1] >= medians[2]


@pytest.mark.slow
def test_planted_fidelity_over_seeds():
    residuals = []
    for seed in range(20):
        matrix = planted_matrix(100, 150, 5, Rng(seed))
        factors = svd(matrix, 5)
        sketch = modfkv(matrix, 15.0, 0.5, 0.5, Rng(seed, 1), q_cap=500, normalizer="exact")
        residuals.append(fkv_quality(sketch, matrix, min(5, sketch.k), factors).projector_residual)
    assert np.median(residuals) <= 0.2
