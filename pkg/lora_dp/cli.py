# ------------------------
# Command-line front end
# ------------------------
"""
``lora-dp`` ties ingestion, experiments and reports together.

Every command writes its CSV artifacts and a ``config.echo`` into ``--out``.
Exit codes: 0 success, 1 data or runtime error, 2 usage error.
"""
import dataclasses
import logging
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd
from rich.console import Console
from rich.logging import RichHandler

from . import config as cfg
from .dp_analysis import dp_check, dp_params, typicalize, violations_frame
from .errors import LabError, PreconditionError
from .linalg_svd import Rng, export_svd_csv, svd
from .matrix_io import (
    as_dense,
    load_csv_triplets,
    load_movielens,
    load_pgm_image,
    save_csv_triplets,
    stats,
    subsample,
)
from .models import FlipDirection, PreferenceMatrix
from .perturb_lab import (
    CHEBYSHEV_T,
    core_lemma_sweep,
    global_norm_sweep,
    predict_perturbation,
    row_norm_sweep,
    sample_flip,
)
from .randmat_stats import (
    mp_inside_fraction,
    mp_pdf,
    mp_support,
    noise_floor,
    noise_singular_values,
    srec_test,
)
from .recommender import recommend, typicality
from .report import build_report
from .sketch_fkv import NORMALIZERS, export_sketch_csv, fkv_quality, modfkv
from .synthetic import DEFAULT_NOISE, DEFAULT_SIGNAL, planted_matrix

logger = logging.getLogger("lora_dp")

# Independent streams under one seed
STREAM_DATA = 0
STREAM_SUBSAMPLE = 1
STREAM_EXPERIMENT = 2

FORMATS = ("auto", "csv", "movielens", "pgm")
FLOAT_FORMAT = "%.12g"


# ------------------------
# Helpers
# ------------------------
class LabGroup(click.Group):
    """Turns library errors into one-line diagnostics with exit code 1."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except LabError as exc:
            logger.debug("command failed", exc_info=True)
            raise click.ClickException(str(exc)) from exc


def setup_logging(level):
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)],
        force=True,
    )


def parse_int_list(ctx, param, value):
    """'1,2,5' or '1-15' or a mix of both."""
    if value is None:
        return None
    out = set()
    try:
        for part in str(value).split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                lo, hi = (int(p) for p in part.split("-", 1))
                out.update(range(lo, hi + 1))
            else:
                out.add(int(part))
    except ValueError:
        raise click.BadParameter(f"{value!r} is not a list of integers") from None
    if not out:
        raise click.BadParameter("empty list")
    return tuple(sorted(out))


def parse_planted(ctx, param, value):
    if value is None:
        return None
    try:
        m, n, rank = (int(p) for p in value.lower().split("x"))
    except ValueError:
        raise click.BadParameter(f"{value!r} is not of the form MxNxR") from None
    return m, n, rank


def input_options(func):
    options = [
        click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     help="Ratings CSV, triplet CSV or PGM image."),
        click.option("--format", "fmt", type=click.Choice(FORMATS), default="auto", show_default=True),
        click.option("--min-rating", type=float, default=0.5, show_default=True,
                     help="MovieLens ratings at or above this count as a like."),
        click.option("--movies", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     help="MovieLens movies.csv defining the product index."),
        click.option("--threshold", type=float, default=0.5, show_default=True,
                     help="PGM binarization threshold as a fraction of maxval."),
        click.option("--subsample", "subsample_factor", type=int, default=1, show_default=True,
                     help="Keep ceil(m / factor) random users."),
        click.option("--planted", callback=parse_planted,
                     help="Synthetic planted low-rank matrix MxNxR instead of --input."),
        click.option("--signal", type=float, default=DEFAULT_SIGNAL, show_default=True),
        click.option("--noise", type=float, default=DEFAULT_NOISE, show_default=True),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _detect_format(path, fmt):
    if fmt != "auto":
        return fmt
    if path.suffix.lower() == ".pgm":
        return "pgm"
    with open(path, encoding="utf-8", errors="replace") as handle:
        first = handle.readline()
    return "movielens" if first.startswith("userId") else "csv"


def load_input(ctx, params):
    """Matrix selected by the input options: a PreferenceMatrix or a dense planted array."""
    settings = ctx.obj
    path, planted = params["input_path"], params["planted"]
    if (path is None) == (planted is None):
        raise click.UsageError("pass exactly one of --input or --planted")
    if planted is not None:
        m, n, rank = planted
        matrix = planted_matrix(m, n, rank, Rng(settings.seed, STREAM_DATA),
                                signal=params["signal"], noise=params["noise"])
    else:
        fmt = _detect_format(path, params["fmt"])
        if fmt == "movielens":
            matrix = load_movielens(path, min_rating=params["min_rating"], movies_path=params["movies"])
        elif fmt == "pgm":
            matrix = load_pgm_image(path, threshold=params["threshold"])
        else:
            matrix = load_csv_triplets(path)
    if params["subsample_factor"] != 1:
        if not isinstance(matrix, PreferenceMatrix):
            raise click.UsageError("--subsample applies to loaded datasets only")
        matrix = subsample(matrix, params["subsample_factor"], Rng(settings.seed, STREAM_SUBSAMPLE))
    logger.info("input %s: %dx%d", path or "planted", *matrix.shape)
    return matrix


def guard_dense(ctx, matrix):
    m, n = matrix.shape
    if m * n > ctx.obj.max_dense:
        raise PreconditionError(
            f"{m}x{n} = {m * n} cells exceeds --max-dense {ctx.obj.max_dense}; raise it to proceed"
        )


def write_csv(ctx, frame, name):
    path = ctx.obj.out / name
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def echo_config(ctx, command, params, **fields):
    settings = ctx.obj
    extras = {k: v for k, v in sorted(params.items()) if k not in fields}
    extras = {k: (str(v) if isinstance(v, Path) else v) for k, v in extras.items()}
    config = cfg.ExperimentConfig(
        command=command, out=settings.out, seed=settings.seed, threads=settings.threads,
        max_dense=settings.max_dense, options=extras, **fields,
    )
    config.write_echo()
    return config


def experiment_rng(ctx):
    return Rng(ctx.obj.seed, STREAM_EXPERIMENT)


def inputs_of(params):
    path = params.get("input_path")
    return (str(path),) if path else ()


# ------------------------
# Group
# ------------------------
class Settings:
    def __init__(self, out, seed, threads, max_dense):
        self.out = out
        self.seed = seed
        self.threads = threads
        self.max_dense = max_dense


@click.group(cls=LabGroup)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("results"),
              show_default=True, help="Directory for CSV artifacts and config.echo.")
@click.option("--seed", type=int, default=None, help="Master seed (env LORA_DP_SEED, default 0).")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Worker threads for trial fan-out (env LORA_DP_THREADS).")
@click.option("--max-dense", type=click.IntRange(min=1), default=None,
              help="Refuse brute-force runs above this many cells (env LORA_DP_MAX_DENSE).")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              default=None, help="Env LORA_DP_LOG_LEVEL, default INFO.")
@click.pass_context
def main(ctx, out, seed, threads, max_dense, log_level):
    """Numerical lab for the privacy of low-rank recommendation sampling."""
    try:
        settings = Settings(
            out=out,
            seed=cfg.default_seed() if seed is None else seed,
            threads=cfg.default_threads() if threads is None else threads,
            max_dense=cfg.default_max_dense() if max_dense is None else max_dense,
        )
        level = (log_level or cfg.default_log_level()).upper()
    except LabError as exc:
        raise click.UsageError(str(exc)) from exc
    setup_logging(level)
    ctx.obj = settings


# ------------------------
# Data commands
# ------------------------
@main.command()
@input_options
@click.pass_context
def ingest(ctx, **params):
    """Load a dataset and write it back as row,col,1 triplets."""
    matrix = load_input(ctx, params)
    if not isinstance(matrix, PreferenceMatrix):
        raise click.UsageError("ingest writes binary datasets; --planted matrices are real-valued")
    echo_config(ctx, "ingest", params, inputs=inputs_of(params))
    path = save_csv_triplets(matrix, ctx.obj.out / "matrix.csv")
    click.echo(f"{matrix!r} -> {path}")


@main.command(name="stats")
@input_options
@click.pass_context
def stats_command(ctx, **params):
    """Print m, n, eta and density."""
    matrix = load_input(ctx, params)
    summary = stats(matrix)
    echo_config(ctx, "stats", params, inputs=inputs_of(params))
    write_csv(ctx, pd.DataFrame([vars(summary)], columns=["m", "n", "nnz", "eta", "density"]), "stats.csv")
    click.echo(summary.line())


@main.command(name="svd")
@input_options
@click.option("--rank", type=click.IntRange(min=1), required=True)
@click.pass_context
def svd_command(ctx, rank, **params):
    """Top singular triplets; one CSV line per triplet (sigma, u, v)."""
    matrix = load_input(ctx, params)
    factors = svd(matrix, rank)
    echo_config(ctx, "svd", {"rank": rank, **params}, inputs=inputs_of(params))
    ctx.obj.out.mkdir(parents=True, exist_ok=True)
    export_svd_csv(factors, ctx.obj.out / "svd.csv")
    write_csv(ctx, pd.DataFrame({"index": np.arange(1, factors.r + 1), "sigma": factors.sigma}), "spectrum.csv")
    click.echo(f"sigma_1={factors.sigma[0]:.6g} sigma_{factors.r}={factors.sigma[-1]:.6g} "
               f"tail={factors.residual_tail_sq:.6g}")


@main.command(name="recommend")
@input_options
@click.option("--user", type=click.IntRange(min=0), required=True)
@click.option("--k", type=click.IntRange(min=1), required=True)
@click.option("--samples", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--backend", type=click.Choice(["exact", "fkv"]), default="exact", show_default=True)
@click.option("--algorithm", type=click.Choice(["quantum", "classical"]), default="quantum", show_default=True)
@click.option("--sigma", type=float, help="fkv threshold.")
@click.option("--eps", type=float, default=0.5, show_default=True)
@click.option("--kappa", type=float, default=0.5, show_default=True)
@click.option("--q-cap", type=click.IntRange(min=1))
@click.pass_context
def recommend_command(ctx, user, k, samples, backend, algorithm, sigma, eps, kappa, q_cap, **params):
    """Sample products for one user from the rank-k approximation."""
    matrix = load_input(ctx, params)
    rng = experiment_rng(ctx)
    factors = sketch = None
    if backend == "fkv":
        if sigma is None:
            raise click.UsageError("--backend fkv needs --sigma")
        sketch = modfkv(matrix, sigma, eps, kappa, rng.child(0), q_cap=q_cap)
    else:
        if algorithm == "classical":
            guard_dense(ctx, matrix)
        factors = svd(matrix, k)
    draws = [
        recommend(matrix, user, k, rng.child(t + 1), backend=backend, factors=factors,
                  sketch=sketch, algorithm=algorithm)
        for t in range(samples)
    ]
    frame = pd.DataFrame({"draw": np.arange(samples), "product": draws})
    labels = getattr(matrix, "col_labels", None)
    if labels is not None:
        frame["label"] = labels[frame["product"].to_numpy()]
    echo_config(ctx, "recommend", {"user": user, "backend": backend, "algorithm": algorithm,
                                   "samples": samples, "q_cap": q_cap, **params},
                inputs=inputs_of(params), k_list=(k,), sigma=sigma, eps=eps, kappa=kappa)
    write_csv(ctx, frame, "recommend.csv")
    click.echo(" ".join(str(d) for d in draws))


@main.command(name="typicality")
@input_options
@click.option("--gamma", type=float, required=True)
@click.pass_context
def typicality_command(ctx, gamma, **params):
    """Flag gamma-typical users."""
    matrix = load_input(ctx, params)
    report = typicality(matrix, gamma)
    echo_config(ctx, "typicality", params, inputs=inputs_of(params), gamma=gamma)
    frame = pd.DataFrame.from_records(report.per_user, columns=["row_norm_sq", "typical"])
    frame.insert(0, "user", np.arange(len(frame)))
    write_csv(ctx, frame, "typicality.csv")
    tilde = "undefined" if report.gamma_tilde is None else f"{report.gamma_tilde:.6g}"
    click.echo(f"eta={report.eta:.6g} gamma_tilde={tilde} typical={report.typical_count}/"
               f"{report.is_typical.size} ({report.typical_fraction:.3f})")


# ------------------------
# Perturbation experiments
# ------------------------
def sweep_options(func):
    options = [
        click.option("--k-list", callback=parse_int_list, default="1-15", show_default=True,
                     help="Cutoffs, e.g. 1,2,5 or 1-15."),
        click.option("--trials", type=click.IntRange(min=1), default=200, show_default=True),
        click.option("--direction", type=click.Choice([d.value for d in FlipDirection]),
                     default=FlipDirection.ADD.value, show_default=True),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _capture_frame(matrix, trials, rng, direction):
    dense = as_dense(matrix)
    factors = svd(dense, min(dense.shape))
    records = []
    for t in range(trials):
        flip = sample_flip(dense, direction, rng.child(t))
        prediction = predict_perturbation(factors, flip, factors.r)
        records.append({
            "trial": t, "i": flip.i, "j": flip.j,
            "capture_fraction": prediction.capture_fraction,
            "boxed_capture_fraction": prediction.boxed_capture_fraction,
        })
    return pd.DataFrame.from_records(records, columns=["trial", "i", "j", "capture_fraction",
                                                       "boxed_capture_fraction"])


@main.command(name="perturb")
@input_options
@sweep_options
@click.option("--band-t", type=float, default=CHEBYSHEV_T, show_default=True,
              help="Chebyshev band half-width in units of Sigma(k).")
@click.option("--capture-trials", type=click.IntRange(min=0), default=0, show_default=True,
              help="Also write capture.csv over this many full-rank predictions.")
@click.pass_context
def perturb_command(ctx, k_list, trials, direction, band_t, capture_trials, **params):
    """Entry change delta(k) against f(k) and its Chebyshev band."""
    matrix = load_input(ctx, params)
    guard_dense(ctx, matrix)
    rng = experiment_rng(ctx)
    direction = FlipDirection(direction)
    frame = core_lemma_sweep(matrix, k_list, trials, rng, band_t=band_t,
                             threads=ctx.obj.threads, direction=direction)
    echo_config(ctx, "perturb", {"band_t": band_t, "capture_trials": capture_trials,
                                 "direction": direction.value, **params},
                inputs=inputs_of(params), k_list=k_list, trials=trials)
    write_csv(ctx, frame, "core_lemma.csv")
    if capture_trials:
        capture = _capture_frame(matrix, capture_trials, rng.child(trials), direction)
        write_csv(ctx, capture, "capture.csv")
        click.echo(f"mean capture_fraction={capture['capture_fraction'].mean():.6g}")
    ratio = (frame["delta_mean"] / frame["f_k"]).to_numpy()
    click.echo(f"delta/f(k) in [{ratio.min():.3g}, {ratio.max():.3g}] over k={k_list[0]}..{k_list[-1]}")


@main.command(name="rownorm")
@input_options
@sweep_options
@click.pass_context
def rownorm_command(ctx, k_list, trials, direction, **params):
    """Row change |(Delta_k)_i|^2 against k/n and the bound 2."""
    matrix = load_input(ctx, params)
    guard_dense(ctx, matrix)
    frame = row_norm_sweep(matrix, k_list, trials, experiment_rng(ctx), threads=ctx.obj.threads,
                           direction=FlipDirection(direction))
    echo_config(ctx, "rownorm", {"direction": direction, **params}, inputs=inputs_of(params),
                k_list=k_list, trials=trials)
    write_csv(ctx, frame, "row_norm.csv")
    click.echo(f"max row change {frame['row_change_max'].max():.6g} (bound 2)")


@main.command(name="globalnorm")
@input_options
@sweep_options
@click.pass_context
def globalnorm_command(ctx, k_list, trials, direction, **params):
    """Whole-matrix against single-row change per cutoff."""
    matrix = load_input(ctx, params)
    guard_dense(ctx, matrix)
    frame = global_norm_sweep(matrix, k_list, trials, experiment_rng(ctx), threads=ctx.obj.threads,
                              direction=FlipDirection(direction))
    echo_config(ctx, "globalnorm", {"direction": direction, **params}, inputs=inputs_of(params),
                k_list=k_list, trials=trials)
    write_csv(ctx, frame, "global_norm.csv")
    gap = (frame["global_mean"] / frame["row_mean"]).max()
    click.echo(f"largest global/row ratio {gap:.3g}")


# ------------------------
# Random-matrix checks
# ------------------------
@main.command(name="srec")
@input_options
@click.option("--rank", type=click.IntRange(min=2), required=True)
@click.option("--which", type=click.Choice(["left", "right"]), default="right", show_default=True)
@click.option("--rows", "row_count", type=click.IntRange(min=1), default=30, show_default=True,
              help="Number of randomly chosen rows to pool.")
@click.option("--bins", type=click.IntRange(min=1), default=50, show_default=True)
@click.pass_context
def srec_command(ctx, rank, which, row_count, bins, **params):
    """Histogram singular-vector components against SProj."""
    matrix = load_input(ctx, params)
    factors = svd(matrix, rank)
    size = factors.m if which == "left" else factors.n
    rows = np.sort(experiment_rng(ctx).generator.choice(size, min(row_count, size), replace=False))
    result = srec_test(factors, which=which, sample_rows=rows, bins=bins)
    echo_config(ctx, "srec", {"rank": rank, "which": which, "rows": row_count, "bins": bins, **params},
                inputs=inputs_of(params))
    write_csv(ctx, result.histogram, "srec_hist.csv")
    write_csv(ctx, result.ks, "srec_ks.csv")
    click.echo(f"pooled_ks={result.pooled_ks:.4g} partial_mass={result.partial_mass:.4g} "
               f"expected={result.expected_partial_mass:.4g}")


@main.command(name="mp")
@click.option("--m", "m", type=click.IntRange(min=1), required=True)
@click.option("--n", "n", type=click.IntRange(min=1), required=True)
@click.option("--intensity", type=float, default=1.0, show_default=True)
@click.option("--points", type=click.IntRange(min=2), default=200, show_default=True)
@click.option("--simulate", is_flag=True, help="Compare a seeded Gaussian matrix against the support.")
@click.option("--slack", type=float, default=0.1, show_default=True)
@click.pass_context
def mp_command(ctx, m, n, intensity, points, simulate, slack):
    """Marcenko-Pastur density, support and noise floor."""
    alpha = n / m
    lo, hi = mp_support(alpha)
    x = np.linspace(lo, hi, points)
    params = {"m": m, "n": n, "intensity": intensity, "points": points, "simulate": simulate, "slack": slack}
    echo_config(ctx, "mp", params)
    write_csv(ctx, pd.DataFrame({"x": x, "pdf": mp_pdf(x, alpha)}), "mp.csv")
    floor = noise_floor(m, n, intensity)
    click.echo(f"alpha={alpha:.6g} support=[{lo:.6g}, {hi:.6g}] noise_floor={floor.value:.6g}"
               + (" (degenerate)" if floor.degenerate else ""))
    if simulate:
        values = noise_singular_values(m, n, experiment_rng(ctx), intensity)
        write_csv(ctx, pd.DataFrame({"sigma_scaled": values}), "mp_empirical.csv")
        click.echo(f"inside support (+{slack:g}): {mp_inside_fraction(values, alpha, slack):.4f}")


# ------------------------
# Privacy
# ------------------------
@main.command(name="dp-params")
@click.option("--m", "m", type=click.IntRange(min=1), required=True)
@click.option("--n", "n", type=click.IntRange(min=1), required=True)
@click.option("--k", type=click.IntRange(min=1), required=True)
@click.option("--eta", type=float, required=True)
@click.option("--gamma", type=float, required=True)
@click.pass_context
def dp_params_command(ctx, m, n, k, eta, gamma):
    """Closed-form (epsilon, delta) for gamma-typical users."""
    budget = dp_params(m, n, k, eta, gamma)
    echo_config(ctx, "dp-params", {"m": m, "n": n, "eta": eta}, k_list=(k,), gamma=gamma)
    write_csv(ctx, pd.DataFrame([vars(budget)]), "dp_params.csv")
    click.echo(f"epsilon={budget.epsilon:.6g} delta={budget.delta:.6g} gamma_tilde={budget.gamma_tilde:.6g}")


@main.command(name="dp-check")
@input_options
@click.option("--k", type=click.IntRange(min=1), required=True)
@click.option("--gamma", type=float, default=1.0, show_default=True)
@click.option("--trials", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--direction", type=click.Choice([d.value for d in FlipDirection]),
              default=FlipDirection.ADD.value, show_default=True)
@click.option("--epsilon", type=float, help="Override the budget's epsilon.")
@click.option("--delta", type=float, help="Override the budget's delta.")
@click.pass_context
def dp_check_command(ctx, k, gamma, trials, direction, epsilon, delta, **params):
    """Empirical (epsilon, delta) check over random flips of typical users."""
    matrix = load_input(ctx, params)
    guard_dense(ctx, matrix)
    budget = None
    if epsilon is not None or delta is not None:
        summary = stats(matrix)
        base = dp_params(summary.m, summary.n, k, summary.eta, gamma)
        budget = dataclasses.replace(
            base,
            epsilon=base.epsilon if epsilon is None else epsilon,
            delta=base.delta if delta is None else delta,
        )
    report = dp_check(matrix, k, gamma, trials, experiment_rng(ctx), budget,
                      direction=FlipDirection(direction), threads=ctx.obj.threads)
    echo_config(ctx, "dp-check", {"direction": direction, "epsilon": epsilon, "delta": delta, **params},
                inputs=inputs_of(params), k_list=(k,), gamma=gamma, trials=trials)
    write_csv(ctx, violations_frame(report), "dp_check.csv")
    click.echo(f"violations={report.violation_count}/{report.checked_pairs} "
               f"rate={report.violation_rate:.4g} worst_ratio={report.worst_ratio:.6g} "
               f"violating_trials={report.violating_trials} new_support={report.new_support_count} "
               f"skipped={report.skipped_trials}")


@main.command(name="typicalize")
@input_options
@click.option("--gamma", type=float, required=True)
@click.pass_context
def typicalize_command(ctx, gamma, **params):
    """Pad or trim users into the gamma-typical band."""
    matrix = load_input(ctx, params)
    result = typicalize(matrix, gamma, experiment_rng(ctx))
    counts = result.matrix.row_counts
    compliant = (counts >= result.eta / (1.0 + gamma)) & (counts <= (1.0 + gamma) * result.eta)
    echo_config(ctx, "typicalize", params, inputs=inputs_of(params), gamma=gamma)
    save_csv_triplets(result.matrix, ctx.obj.out / "typicalized.csv")
    click.echo(f"eta={result.eta:.6g} added={result.added} removed={result.removed} "
               f"typical={int(compliant.sum())}/{compliant.size}")


# ------------------------
# Sketch
# ------------------------
@main.command(name="fkv")
@input_options
@click.option("--sigma", type=float, required=True)
@click.option("--eps", type=float, default=0.5, show_default=True)
@click.option("--kappa", type=float, default=0.5, show_default=True)
@click.option("--q-cap", type=click.IntRange(min=1))
@click.option("--c", "c", type=float, default=1.0, show_default=True)
@click.option("--normalizer", type=click.Choice(NORMALIZERS), default="sketch", show_default=True)
@click.option("--k", type=click.IntRange(min=1), help="Compare the first k vectors with the exact top-k space.")
@click.pass_context
def fkv_command(ctx, sigma, eps, kappa, q_cap, c, normalizer, k, **params):
    """ModFKV sketch and its fidelity against the exact SVD."""
    matrix = load_input(ctx, params)
    sketch = modfkv(matrix, sigma, eps, kappa, experiment_rng(ctx), q_cap=q_cap, c=c, normalizer=normalizer)
    echo_config(ctx, "fkv", {"q_cap": q_cap, "c": c, "normalizer": normalizer, **params},
                inputs=inputs_of(params), k_list=() if k is None else (k,), sigma=sigma, eps=eps, kappa=kappa)
    ctx.obj.out.mkdir(parents=True, exist_ok=True)
    export_sketch_csv(sketch, ctx.obj.out / "fkv.csv")
    click.echo(f"q={sketch.q} K={sketch.K:.6g} kept={sketch.k} coherence={sketch.coherence:.3g}")
    if k is not None:
        quality = fkv_quality(sketch, matrix, min(k, sketch.k))
        write_csv(ctx, pd.DataFrame([{
            "k": quality.k,
            "projector_residual": quality.projector_residual,
            "max_angle": float(quality.angles.max()),
        }]), "fkv_quality.csv")
        click.echo(f"projector_residual={quality.projector_residual:.4g}")


# ------------------------
# Report
# ------------------------
@main.command(name="report")
@click.pass_context
def report_command(ctx):
    """Aggregate the CSVs in --out into report.md."""
    path = build_report(ctx.obj.out)
    echo_config(ctx, "report", {"report": path.name})
    click.echo(str(path))


def run(argv=None):
    """Run the CLI and return its exit code."""
    try:
        main.main(args=argv, prog_name="lora-dp", standalone_mode=True)
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 1
    return 0


if __name__ == "__main__":
    sys.exit(run())
