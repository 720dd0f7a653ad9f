import pandas as pd
import pytest

from lora_dp.cli import main, run
from lora_dp.config import ExperimentConfig
from lora_dp.dp_analysis import dp_params
from lora_dp.matrix_io import load_csv_triplets


def invoke(runner, out, *args):
    return runner.invoke(main, ["--out", str(out), "--log-level", "WARNING", *args])


def parse_pairs(line):
    return {key: value for key, _, value in (part.partition("=") for part in line.split())}


# ------------------------
# Test configuration echo
# ------------------------
def test_echo_is_sorted_and_stable(tmp_path):
    config = ExperimentConfig(command="perturb", out=tmp_path, seed=3, k_list=(1, 2, 5),
                              options={"direction": "add", "movies": None})
    lines = config.echo().splitlines()
    assert lines == sorted(lines)
    assert "k_list=1,2,5" in lines
    assert "option.movies=" in lines
    assert "seed=3" in lines
    assert config.write_echo().read_text(encoding="utf-8") == config.echo()


def test_seed_from_environment(runner, tmp_path, triplet_csv, monkeypatch):
    monkeypatch.setenv("LORA_DP_SEED", "7")
    result = invoke(runner, tmp_path, "stats", "--input", str(triplet_csv))
    assert result.exit_code == 0
    assert "seed=7" in (tmp_path / "config.echo").read_text(encoding="utf-8").splitlines()

    monkeypatch.setenv("LORA_DP_SEED", "seven")
    assert invoke(runner, tmp_path, "stats", "--input", str(triplet_csv)).exit_code == 2


# ------------------------
# Test exit codes
# ------------------------
def test_stats_prints_summary(runner, tmp_path, triplet_csv):
    result = invoke(runner, tmp_path, "stats", "--input", str(triplet_csv))
    assert result.exit_code == 0
    assert result.stdout.startswith("m=4 n=5 ")
    assert "density=0.150" in result.stdout
    frame = pd.read_csv(tmp_path / "stats.csv")
    assert frame.loc[0, "nnz"] == 3


def test_usage_errors_exit_2(runner, tmp_path, triplet_csv):
    assert invoke(runner, tmp_path, "stats", "--bogus").exit_code == 2
    assert invoke(runner, tmp_path, "stats").exit_code == 2
    both = invoke(runner, tmp_path, "stats", "--input", str(triplet_csv), "--planted", "4x5x2")
    assert both.exit_code == 2
    assert invoke(runner, tmp_path, "perturb", "--planted", "4x5", "--trials", "2").exit_code == 2
    assert run(["--bogus"]) == 2


def test_data_errors_exit_1(runner, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("0,x\n", encoding="utf-8")
    result = invoke(runner, tmp_path / "out", "stats", "--input", str(bad))
    assert result.exit_code == 1
    assert "line 1:" in result.stderr
    assert "Traceback" not in result.stderr


def test_undecodable_input_exits_1(runner, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_bytes(b"\xff\xfe")
    result = invoke(runner, tmp_path / "out", "stats", "--input", str(bad))
    assert result.exit_code == 1
    assert "not UTF-8" in result.stderr
    assert "Traceback" not in result.stderr
    assert len(result.stderr.strip().splitlines()) == 1


def test_catalogue_without_movie_id_exits_1(runner, tmp_path, movielens_dir):
    (movielens_dir / "movies.csv").write_text("id,title\n10,A\n", encoding="utf-8")
    result = invoke(runner, tmp_path / "out", "stats", "--input", str(movielens_dir / "ratings.csv"))
    assert result.exit_code == 1
    assert "no movieId column" in result.stderr
    assert "Traceback" not in result.stderr


def test_max_dense_guard(runner, tmp_path):
    result = runner.invoke(main, ["--out", str(tmp_path), "--log-level", "WARNING", "--max-dense", "100",
                                  "perturb", "--planted", "20x30x3", "--trials", "2"])
    assert result.exit_code == 1
    assert "--max-dense" in result.stderr


def test_run_returns_zero(tmp_path, triplet_csv):
    assert run(["--out", str(tmp_path), "--log-level", "ERROR", "stats", "--input", str(triplet_csv)]) == 0


# ------------------------
# Test data commands
# ------------------------
def test_ingest_movielens(runner, tmp_path, movielens_dir):
    result = invoke(runner, tmp_path, "ingest", "--input", str(movielens_dir / "ratings.csv"))
    assert result.exit_code == 0
    matrix = load_csv_triplets(tmp_path / "matrix.csv")
    assert matrix.shape == (3, 4)
    assert matrix.nnz == 5


def test_recommend_and_typicality(runner, tmp_path, movielens_dir):
    ratings = str(movielens_dir / "ratings.csv")
    result = invoke(runner, tmp_path, "recommend", "--input", ratings, "--user", "0", "--k", "2",
                    "--samples", "5")
    assert result.exit_code == 0
    frame = pd.read_csv(tmp_path / "recommend.csv")
    assert len(frame) == 5
    assert set(frame["label"]) <= {10, 20, 30, 40}

    result = invoke(runner, tmp_path, "typicality", "--input", ratings, "--gamma", "1")
    assert result.exit_code == 0
    assert "typical=" in result.stdout
    frame = pd.read_csv(tmp_path / "typicality.csv")
    assert list(frame.columns) == ["user", "row_norm_sq", "typical"]
    assert frame["row_norm_sq"].tolist() == [2.0, 1.0, 2.0]


# ------------------------
# Test experiments
# ------------------------
def test_perturb_is_reproducible_across_threads(runner, tmp_path):
    args = ["perturb", "--planted", "20x30x3", "--k-list", "1,2,5", "--trials", "10"]
    first = runner.invoke(main, ["--out", str(tmp_path / "a"), "--log-level", "WARNING", "--threads", "1", *args])
    second = runner.invoke(main, ["--out", str(tmp_path / "b"), "--log-level", "WARNING", "--threads", "3", *args])
    assert first.exit_code == second.exit_code == 0
    a = (tmp_path / "a" / "core_lemma.csv").read_bytes()
    assert a == (tmp_path / "b" / "core_lemma.csv").read_bytes()
    assert a.startswith(b"k,f_k,sigma_bound,")
    echo = (tmp_path / "a" / "config.echo").read_text(encoding="utf-8").splitlines()
    assert "command=perturb" in echo and "k_list=1,2,5" in echo


def test_sweeps_and_report(runner, tmp_path):
    for command in ("rownorm", "globalnorm"):
        result = invoke(runner, tmp_path, command, "--planted", "20x30x3", "--k-list", "1-3", "--trials", "4")
        assert result.exit_code == 0, result.output
    assert len(pd.read_csv(tmp_path / "row_norm.csv")) == 3
    result = invoke(runner, tmp_path, "report")
    assert result.exit_code == 0
    text = (tmp_path / "report.md").read_text(encoding="utf-8")
    assert "## Row-norm change" in text
    assert "## Global against row norm change" in text
    assert "## Privacy budget" not in text
    echo = (tmp_path / "config.echo").read_text(encoding="utf-8").splitlines()
    assert "command=report" in echo
    assert "option.report=report.md" in echo


def test_report_without_artifacts(runner, tmp_path):
    result = invoke(runner, tmp_path / "empty", "report")
    assert result.exit_code == 1


def test_srec_command(runner, tmp_path):
    result = invoke(runner, tmp_path, "srec", "--planted", "40x60x3", "--rank", "5", "--rows", "10")
    assert result.exit_code == 0
    assert len(pd.read_csv(tmp_path / "srec_ks.csv")) == 10
    assert "pooled_ks=" in result.stdout


def test_mp_command(runner, tmp_path):
    result = invoke(runner, tmp_path, "mp", "--m", "100", "--n", "400", "--simulate")
    assert result.exit_code == 0
    assert "support=[1, 3] noise_floor=10" in result.stdout
    assert (tmp_path / "mp.csv").exists()
    assert len(pd.read_csv(tmp_path / "mp_empirical.csv")) == 100


# ------------------------
# Test privacy commands
# ------------------------
def test_dp_params_command(runner, tmp_path):
    result = invoke(runner, tmp_path, "dp-params", "--m", "610", "--n", "9742", "--k", "10",
                    "--eta", "165.3", "--gamma", "1")
    assert result.exit_code == 0
    printed = parse_pairs(result.stdout)
    expected = dp_params(610, 9742, 10, 165.3, 1.0)
    assert float(printed["epsilon"]) == pytest.approx(expected.epsilon, rel=1e-5)
    assert float(printed["delta"]) == pytest.approx(expected.delta, rel=1e-5)
    assert pd.read_csv(tmp_path / "dp_params.csv").loc[0, "k"] == 10


def test_dp_params_bad_eta(runner, tmp_path):
    result = invoke(runner, tmp_path, "dp-params", "--m", "10", "--n", "10", "--k", "1",
                    "--eta", "2", "--gamma", "1")
    assert result.exit_code == 1


def test_dp_check_and_typicalize(runner, tmp_path, triplet_csv):
    result = invoke(runner, tmp_path, "dp-check", "--planted", "30x40x3", "--k", "3", "--trials", "5")
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "dp_check.csv")
    assert set(frame["direction"]) <= {"forward", "reverse"}
    printed = parse_pairs(result.stdout)
    assert int(printed["violating_trials"]) == frame.loc[frame["violated"], "trial"].nunique()
    assert int(printed["new_support"]) == frame["new_support_products"].sum()
    assert "violations" in printed and "skipped" in printed

    result = invoke(runner, tmp_path, "report")
    assert result.exit_code == 0
    text = (tmp_path / "report.md").read_text(encoding="utf-8")
    assert "violating_trials" in text and "new_support" in text

    result = invoke(runner, tmp_path, "typicalize", "--input", str(triplet_csv), "--gamma", "1")
    assert result.exit_code == 0
    assert load_csv_triplets(tmp_path / "typicalized.csv", m_hint=4, n_hint=5).nnz >= 3
