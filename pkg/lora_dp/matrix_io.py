"""
Loaders for rating datasets and images, plus dataset statistics.

Every loader returns a binary PreferenceMatrix.
"""
import logging
import math
import re
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .errors import DataFormatError, DimensionError, PreconditionError
from .models import DatasetStats, PreferenceMatrix

logger = logging.getLogger(__name__)

MOVIELENS_HEADER = ["userId", "movieId", "rating", "timestamp"]
_SHAPE_DIRECTIVE = re.compile(r"#\s*shape:\s*(\d+)\s+(\d+)\s*$")


def _check_loaded(matrix):
    assert matrix.nnz == int(matrix.row_counts.sum()) == len(matrix.entries)
    return matrix


# ------------------------
# CSV triplets
# ------------------------
def _parse_index(token, line_no, what):
    token = token.strip()
    if not token.isdigit():
        raise DataFormatError(f"{what} {token!r} is not a non-negative integer", line=line_no)
    return int(token)


def load_csv_triplets(path, m_hint=None, n_hint=None):
    """
    Read ``row,col[,value]`` lines into a PreferenceMatrix.

    ``#`` starts a comment. A ``# shape: m n`` line acts as the hints when
    none are passed explicitly. Lines with value 0 are skipped.
    """
    rows, cols = [], []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{Path(path).name} is not UTF-8 text (byte {exc.start})") from exc
    for line_no, raw in enumerate(text.splitlines(), start=1):
        directive = _SHAPE_DIRECTIVE.match(raw.strip())
        if directive:
            m_hint = int(directive.group(1)) if m_hint is None else m_hint
            n_hint = int(directive.group(2)) if n_hint is None else n_hint
            continue
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) not in (2, 3):
            raise DataFormatError(f"expected 2 or 3 fields, got {len(fields)}", line=line_no)
        row = _parse_index(fields[0], line_no, "row")
        col = _parse_index(fields[1], line_no, "column")
        if len(fields) == 3:
            value = fields[2].strip()
            if value not in ("0", "1"):
                raise DataFormatError(f"value {value!r} is not 0 or 1", line=line_no)
            if value == "0":
                continue
        rows.append(row)
        cols.append(col)

    m = max(rows) + 1 if rows else 0
    n = max(cols) + 1 if cols else 0
    if m_hint is not None:
        if m > m_hint:
            raise DimensionError(f"row index {m - 1} exceeds m_hint={m_hint}")
        m = m_hint
    if n_hint is not None:
        if n > n_hint:
            raise DimensionError(f"column index {n - 1} exceeds n_hint={n_hint}")
        n = n_hint
    return _check_loaded(PreferenceMatrix.from_pairs(m, n, rows, cols))


def save_csv_triplets(matrix, path):
    """Write ``row,col,1`` lines preceded by a shape directive."""
    frame = pd.DataFrame({"row": matrix.rows, "col": matrix.cols, "value": 1})
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# shape: {matrix.m} {matrix.n}\n")
        frame.to_csv(handle, header=False, index=False, lineterminator="\n")
    return Path(path)


# ------------------------
# MovieLens
# ------------------------
def _first_bad_row(frame, columns, integral=()):
    bad = frame[columns].isna().any(axis=1).to_numpy()
    for name in integral:
        values = frame[name].to_numpy()
        bad |= ~np.isfinite(values) | (values != np.floor(values))
    return int(np.argmax(bad)) if bad.any() else None


def _catalogue_ids(catalogue):
    try:
        movies = pd.read_csv(catalogue, dtype=str, keep_default_na=False, encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{catalogue.name} is not UTF-8 text") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataFormatError(f"malformed movie catalogue {catalogue.name}: {exc}") from exc
    if "movieId" not in movies.columns:
        raise DataFormatError(f"{catalogue.name} has no movieId column", line=1)
    ids = pd.DataFrame({"movieId": pd.to_numeric(movies["movieId"], errors="coerce")})
    bad = _first_bad_row(ids, ["movieId"], integral=("movieId",))
    if bad is not None:
        raise DataFormatError(f"{catalogue.name}: bad movieId {movies['movieId'].iloc[bad]!r}", line=bad + 2)
    return ids["movieId"].astype(np.int64)


def load_movielens(path, min_rating=0.5, movies_path=None):
    """
    Binarize a MovieLens ``ratings.csv``: rating >= min_rating counts as a like.

    Users are indexed in first-appearance order. Products follow
    ``movies.csv`` (explicit or found next to the ratings file) when one is
    available, so movies nobody rated still occupy a column; any movie
    missing from it is appended in first-appearance order.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path.name} is not UTF-8 text") from exc
    except pd.errors.ParserError as exc:
        raise DataFormatError(f"malformed ratings file: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataFormatError("empty ratings file", line=1) from exc
    if list(raw.columns) != MOVIELENS_HEADER:
        raise DataFormatError(f"unknown header {list(raw.columns)}", line=1)

    parsed = pd.DataFrame({
        "userId": pd.to_numeric(raw["userId"], errors="coerce"),
        "movieId": pd.to_numeric(raw["movieId"], errors="coerce"),
        "rating": pd.to_numeric(raw["rating"], errors="coerce"),
    })
    bad = _first_bad_row(parsed, ["userId", "movieId", "rating"], integral=("userId", "movieId"))
    if bad is not None:
        raise DataFormatError(f"malformed row {raw.iloc[bad].tolist()}", line=bad + 2)

    user_codes, users = pd.factorize(parsed["userId"].astype(np.int64), sort=False)

    catalogue = Path(movies_path) if movies_path else path.with_name("movies.csv")
    movie_order = pd.Index([], dtype=np.int64)
    if catalogue.exists():
        movie_order = pd.Index(pd.unique(_catalogue_ids(catalogue)))
        logger.info("indexing products from %s (%d movies)", catalogue, len(movie_order))
    rated = pd.Index(pd.unique(parsed["movieId"].astype(np.int64)))
    movie_order = movie_order.append(rated.difference(movie_order, sort=False))
    movie_codes = movie_order.get_indexer(parsed["movieId"].astype(np.int64))

    liked = (parsed["rating"] >= min_rating).to_numpy()
    matrix = PreferenceMatrix.from_pairs(
        len(users),
        len(movie_order),
        user_codes[liked],
        movie_codes[liked],
        row_labels=np.asarray(users),
        col_labels=np.asarray(movie_order),
    )
    logger.info("loaded %r from %s", matrix, path)
    return _check_loaded(matrix)


# ------------------------
# PGM images
# ------------------------
def _pgm_header(payload):
    """Return (magic, width, height, maxval, offset of first payload byte)."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(payload) and payload[pos:pos + 1].isspace():
            pos += 1
        if pos < len(payload) and payload[pos:pos + 1] == b"#":
            while pos < len(payload) and payload[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(payload) and not payload[pos:pos + 1].isspace() and payload[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataFormatError("truncated PGM header")
        tokens.append(payload[start:pos].decode("ascii", errors="replace"))
    magic = tokens[0]
    if magic not in ("P2", "P5"):
        raise DataFormatError(f"not a PGM file (magic {magic!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DataFormatError(f"corrupt PGM header {tokens}") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise DataFormatError(f"corrupt PGM header {tokens}")
    return magic, width, height, maxval, pos + 1


def load_pgm_image(path, threshold=0.5):
    """Binarize a P2/P5 image: pixel >= threshold * maxval becomes 1."""
    if not 0.0 < threshold < 1.0:
        raise PreconditionError(f"threshold {threshold} outside (0, 1)")
    payload = Path(path).read_bytes()
    magic, width, height, maxval, offset = _pgm_header(payload)
    count = width * height
    if magic == "P2":
        try:
            values = np.array(payload[offset:].split(), dtype=np.int64)
        except ValueError as exc:
            raise DataFormatError("non-integer pixel in P2 payload") from exc
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = payload[offset:offset + count * dtype.itemsize]
        if len(body) < count * dtype.itemsize:
            raise DataFormatError(f"short P5 payload: {len(body)} bytes for {count} pixels")
        values = np.frombuffer(body, dtype=dtype).astype(np.int64)
    if values.size < count:
        raise DataFormatError(f"short payload: {values.size} pixels, expected {count}")
    pixels = values[:count].reshape(height, width)
    rows, cols = np.nonzero(pixels >= threshold * maxval)
    return _check_loaded(PreferenceMatrix.from_pairs(height, width, rows, cols))


# ------------------------
# Transforms and statistics
# ------------------------
def subsample(matrix, factor, rng):
    """Keep ceil(m / factor) distinct users drawn uniformly, in index order."""
    factor = int(factor)
    if factor < 1:
        raise PreconditionError(f"subsample factor {factor} < 1")
    if factor > matrix.m:
        raise PreconditionError(f"subsample factor {factor} exceeds m={matrix.m}")
    if factor == 1:
        return matrix
    keep = np.sort(rng.generator.choice(matrix.m, math.ceil(matrix.m / factor), replace=False))
    remap = np.full(matrix.m, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    mask = remap[matrix.rows] >= 0
    labels = None if matrix.row_labels is None else matrix.row_labels[keep]
    return _check_loaded(PreferenceMatrix.from_pairs(
        keep.size, matrix.n, remap[matrix.rows[mask]], matrix.cols[mask],
        row_labels=labels, col_labels=matrix.col_labels,
    ))


def stats(matrix):
    m, n = matrix.shape
    if m < 1 or n < 1:
        raise PreconditionError(f"statistics need m, n >= 1 (got {m}x{n})")
    if isinstance(matrix, PreferenceMatrix):
        nnz = matrix.nnz
    else:
        nnz = float(row_norms_sq(matrix).sum())
    return DatasetStats(m=m, n=n, nnz=nnz, eta=nnz / m, density=nnz / (m * n))


def as_dense(matrix):
    if isinstance(matrix, PreferenceMatrix):
        return matrix.to_dense()
    if sp.issparse(matrix):
        return matrix.toarray().astype(np.float64)
    array = np.asarray(matrix, dtype=np.float64)
    if array.ndim != 2:
        raise DimensionError("expected a 2-d matrix")
    return array


def row_norms_sq(matrix):
    """|T_i|^2 per user; equals the record count for binary matrices."""
    if isinstance(matrix, PreferenceMatrix):
        return matrix.row_counts.astype(np.float64)
    if sp.issparse(matrix):
        return np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel()
    array = np.asarray(matrix, dtype=np.float64)
    return np.einsum("ij,ij->i", array, array)


def is_binary(array):
    return bool(np.all((array == 0.0) | (array == 1.0)))
