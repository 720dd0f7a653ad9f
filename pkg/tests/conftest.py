import numpy as np
import pytest
from click.testing import CliRunner

from lora_dp.linalg_svd import Rng
from lora_dp.models import PreferenceMatrix
from lora_dp.synthetic import geometric_spectrum, planted_matrix


@pytest.fixture
def rng():
    """Fresh seeded stream for each test"""
    return Rng(seed=1234)


@pytest.fixture
def small_binary():
    """12x15 binary matrix, every user with at least one record"""
    generator = np.random.default_rng(5)
    dense = (generator.random((12, 15)) < 0.35).astype(np.float64)
    dense[np.arange(12), np.arange(12)] = 1.0
    return PreferenceMatrix.from_dense(dense)


@pytest.fixture(scope="session")
def planted_60x80():
    return planted_matrix(60, 80, 10, Rng(seed=60))


@pytest.fixture(scope="session")
def separated_60x80():
    """Planted rank 10 with data singular values 50 * 0.8^lambda, well clear of the noise"""
    return planted_matrix(60, 80, 10, Rng(seed=61), spectrum=geometric_spectrum(50.0, 10, 0.8))


@pytest.fixture(scope="session")
def planted_200x300():
    """Semi-random test bed: planted rank 8 plus Gaussian noise"""
    return planted_matrix(200, 300, 8, Rng(seed=2024))


@pytest.fixture
def triplet_csv(tmp_path):
    path = tmp_path / "triplets.csv"
    path.write_text("# shape: 4 5\n0,1\n1,2,1\n3,4\n2,0,0\n", encoding="utf-8")
    return path


@pytest.fixture
def movielens_dir(tmp_path):
    """Tiny ratings.csv with a sibling movies.csv listing one unrated movie"""
    (tmp_path / "ratings.csv").write_text(
        "userId,movieId,rating,timestamp\n"
        "1,10,4.0,964982703\n"
        "1,20,0.5,964981247\n"
        "2,20,3.5,964982224\n"
        "3,30,5.0,964983815\n"
        "3,10,2.0,964982931\n",
        encoding="utf-8",
    )
    (tmp_path / "movies.csv").write_text(
        "movieId,title,genres\n"
        "10,A (1995),Comedy\n"
        "20,B (1995),Drama\n"
        "30,C (1995),Drama\n"
        "40,D (1995),Horror\n",
        encoding="utf-8",
    )
    return tmp_path


@pytest.fixture
def runner():
    return CliRunner()
