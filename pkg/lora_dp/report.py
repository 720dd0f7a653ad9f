"""
Markdown report over the CSV artifacts of an output directory.
"""
import logging
from pathlib import Path

import pandas as pd

from .errors import DataFormatError, PreconditionError

logger = logging.getLogger(__name__)

REPORT_FILE = "report.md"

# (file, section title), in report order
SECTIONS = [
    ("stats.csv", "Dataset statistics"),
    ("core_lemma.csv", "Entry change against k"),
    ("row_norm.csv", "Row-norm change"),
    ("global_norm.csv", "Global against row norm change"),
    ("srec_hist.csv", "Singular-vector component histogram"),
    ("srec_ks.csv", "Per-row KS statistics"),
    ("dp_params.csv", "Privacy budget"),
    ("dp_check.csv", "Privacy check violations"),
]
MAX_ROWS = 40


def _cell(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def markdown_table(frame, max_rows=MAX_ROWS):
    """Pipe table of the first ``max_rows`` rows."""
    header = "| " + " | ".join(str(c) for c in frame.columns) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    body = [
        "| " + " | ".join(_cell(v) for v in row) + " |"
        for row in frame.head(max_rows).itertuples(index=False)
    ]
    lines = [header, rule, *body]
    if len(frame) > max_rows:
        lines.append(f"\n_{len(frame) - max_rows} more rows omitted_")
    return "\n".join(lines)


def _dp_summary(frame):
    frame = frame.assign(violated=frame["violated"].astype(str).str.lower() == "true")
    return frame.groupby("direction").agg(
        checks=("trial", "size"),
        violating_trials=("violated", "sum"),
        violating_products=("violating_products", "sum"),
        new_support=("new_support_products", "sum"),
        worst_ratio=("ratio", "max"),
    ).reset_index()


def build_report(out_dir):
    """Write ``report.md`` with one table per CSV found in ``out_dir``."""
    out_dir = Path(out_dir)
    parts = ["# Experiment report", ""]
    found = 0
    for name, title in SECTIONS:
        path = out_dir / name
        if not path.exists():
            continue
        try:
            frame = pd.read_csv(path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise DataFormatError(f"{name}: {exc}") from exc
        if name == "dp_check.csv" and not frame.empty:
            frame = _dp_summary(frame)
        parts += [f"## {title}", "", f"Source: `{name}`", "", markdown_table(frame), ""]
        found += 1
    if not found:
        raise PreconditionError(f"no experiment CSVs in {out_dir}")
    target = out_dir / REPORT_FILE
    target.write_text("\n".join(parts), encoding="utf-8")
    logger.info("report with %d sections written to %s", found, target)
    return target
