import numpy as np
import pytest
from scipy import stats as sstats

from lora_dp.errors import DimensionError, PreconditionError
from lora_dp.linalg_svd import Rng, svd
from lora_dp.models import MarcenkoPastur, SprojDist, SvdFactorization
from lora_dp.randmat_stats import (
    HIST_COLUMNS,
    KS_COLUMNS,
    ks_against_sproj,
    mp_inside_fraction,
    mp_mass,
    mp_pdf,
    mp_support,
    noise_floor,
    noise_singular_values,
    partial_norm_moments,
    sphere_moment_report,
    sphere_sample,
    sproj_cdf,
    sproj_mass,
    sproj_pdf,
    sproj_sample,
    srec_test,
)


def identity_factors(N):
    eye = np.eye(N)
    return SvdFactorization(sigma=np.ones(N), left=eye, right=eye,
                            residual_tail_sq=0.0, frobenius_sq=float(N))


# ------------------------
# Test SProj(N)
# ------------------------
def test_sproj_closed_forms():
    assert sproj_pdf(0.0, 3) == pytest.approx(0.5)
    assert sproj_pdf(0.7, 3) == pytest.approx(0.5)
    assert sproj_pdf(1.5, 10) == 0.0
    assert sproj_cdf(0.0, 7) == pytest.approx(0.5)
    assert sproj_cdf(-1.0, 7) == pytest.approx(0.0)
    assert sproj_cdf(1.0, 7) == pytest.approx(1.0)


@pytest.mark.parametrize("N", [2, 3, 5, 10, 100, 10_000])
def test_sproj_mass_is_one(N):
    assert sproj_mass(N) == pytest.approx(1.0, abs=1e-6)


def test_sproj_cdf_monotone():
    x = np.linspace(-1.0, 1.0, 401)
    assert np.all(np.diff(sproj_cdf(x, 12)) >= 0)


def test_sproj_large_N_is_gaussian():
    N = 10_000
    x = np.linspace(-0.05, 0.05, 201)
    assert np.max(np.abs(sproj_cdf(x, N) - sstats.norm.cdf(x * np.sqrt(N)))) < 0.01


def test_sproj_rejects_small_N():
    with pytest.raises(DimensionError):
        SprojDist(1)
    with pytest.raises(DimensionError):
        sproj_pdf(0.0, 1)


def test_sproj_sample_moments(rng):
    draws = sproj_sample(25, rng, size=100_000)
    assert np.all(np.abs(draws) <= 1.0)
    assert np.mean(draws) == pytest.approx(0.0, abs=0.003)
    assert np.mean(draws**2) == pytest.approx(1.0 / 25, rel=0.02)
    assert ks_against_sproj(draws, 25).statistic < 0.01


# ------------------------
# Test uniform sphere
# ------------------------
def test_sphere_coordinates_follow_sproj(rng):
    points = sphere_sample(20, rng, size=100_000)
    assert np.allclose(np.linalg.norm(points, axis=1), 1.0)
    assert ks_against_sproj(points[:, 0], 20).statistic < 0.01
    assert sphere_sample(20, rng).shape == (20,)


def test_partial_norm_moments(rng):
    mean, var = partial_norm_moments(20, 4)
    assert mean == pytest.approx(0.2)
    assert var == pytest.approx(2 * 4 * 16 / (400 * 22))
    partial = np.sum(sphere_sample(20, rng, size=50_000)[:, :4] ** 2, axis=1)
    assert np.mean(partial) == pytest.approx(mean, abs=0.003)
    assert np.var(partial) == pytest.approx(var, rel=0.05)
    with pytest.raises(DimensionError):
        partial_norm_moments(20, 21)


def test_moment_report_guards(rng):
    with pytest.raises(PreconditionError):
        sphere_moment_report(4, 999, rng)
    report = sphere_moment_report(4, 2000, rng).set_index("statistic")
    assert report.loc["square_cov", "theory"] == pytest.approx(-1.0 / 48.0)
    assert report.loc["square_cov", "stated"] == pytest.approx(-1.0 / 24.0)
    assert report.loc["mean", "stated"] == report.loc["mean", "theory"]
    assert report.loc["second_moment", "theory"] == pytest.approx(0.25)
    assert list(report.columns) == ["estimate", "stderr", "theory", "stated"]


@pytest.mark.parametrize("N", [3, 4, 10, 50])
def test_square_cov_matches_partial_norm_variance(N):
    report = sphere_moment_report(N, 1000, Rng(9)).set_index("statistic")
    var_square = 3.0 / (N * (N + 2)) - 1.0 / N**2
    pair_var = 2 * var_square + 2 * report.loc["square_cov", "theory"]
    assert pair_var == pytest.approx(partial_norm_moments(N, 2)[1], rel=1e-12)


@pytest.mark.slow
def test_moment_report_within_three_standard_errors():
    report = sphere_moment_report(4, 1_000_000, Rng(8)).set_index("statistic")
    for name in ("mean", "second_moment", "cross", "square_cov", "triple", "partial_norm_sq"):
        row = report.loc[name]
        assert abs(row["estimate"] - row["theory"]) <= 3 * row["stderr"] + 1e-12, name


# ------------------------
# Test Marcenko-Pastur
# ------------------------
def test_mp_square_case():
    lo, hi = mp_support(1.0)
    assert (lo, hi) == (0.0, 2.0)
    x = np.linspace(0.0, 2.0, 101)
    assert np.allclose(mp_pdf(x, 1.0), np.sqrt(4.0 - x**2) / np.pi, atol=1e-12)
    assert mp_mass(1.0) == pytest.approx(1.0, abs=1e-6)


def test_mp_support_rectangular():
    lo, hi = mp_support(4.0)
    assert lo == pytest.approx(1.0)
    assert hi == pytest.approx(3.0)
    assert mp_pdf(0.5, 4.0) == 0.0
    assert mp_pdf(2.0, 4.0) > 0.0
    with pytest.raises(DimensionError):
        MarcenkoPastur(0.0)


def test_noise_singular_values_fill_support():
    values = noise_singular_values(400, 400, Rng(40), intensity=0.3)
    assert values.size == 400
    assert mp_inside_fraction(values, 1.0, slack=0.1) >= 0.99


def test_noise_floor(caplog):
    floor = noise_floor(100, 400, 1.0)
    assert floor.value == pytest.approx(10.0)
    assert not floor.degenerate
    degenerate = noise_floor(400, 100, 1.0)
    assert degenerate.degenerate and degenerate.value == 0.0
    assert "degenerate" in caplog.text


# ------------------------
# Test SREC histograms
# ------------------------
def test_srec_on_gaussian_singular_vectors():
    dense = Rng(41).generator.standard_normal((300, 300))
    factors = svd(dense, 300)
    result = srec_test(factors, "right", sample_rows=np.arange(30))
    assert list(result.histogram.columns) == HIST_COLUMNS
    assert list(result.ks.columns) == KS_COLUMNS
    assert result.histogram["count"].sum() == 30 * 300
    assert result.pooled_ks < 0.03
    assert result.ks["ks"].mean() < 0.08
    assert result.partial_mass == pytest.approx(1.0)
    assert result.expected_partial_mass == pytest.approx(1.0)


def test_srec_flags_localized_vectors():
    result = srec_test(identity_factors(50), "left")
    assert result.pooled_ks > 0.4
    assert result.N == 50


def test_srec_partial_rank(planted_60x80):
    result = srec_test(svd(planted_60x80, 10), "left", sample_rows=[0, 5, 9])
    assert result.expected_partial_mass == pytest.approx(10 / 60)
    assert result.ks["n_samples"].tolist() == [10, 10, 10]


def test_srec_guards(planted_60x80):
    with pytest.raises(PreconditionError):
        srec_test(svd(planted_60x80, 1))
    with pytest.raises(PreconditionError):
        srec_test(svd(planted_60x80, 5), which="middle")
    with pytest.raises(DimensionError):
        srec_test(svd(planted_60x80, 5), sample_rows=[80])
