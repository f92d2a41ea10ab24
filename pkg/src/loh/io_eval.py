"""Vector files, brute-force ground truth, retrieval/dedup metrics and
binary-code baselines (random-projection LSH and PCA sign codes).

Vector files use the usual ANN benchmark layout: every record is a
little-endian int32 dimension followed by that many values. ``.fvecs``
holds float32, ``.bvecs`` uint8 and ``.ivecs`` int32.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FormatError, InputError
from .quantization import squared_distances

log = logging.getLogger(__name__)

KINDS = {"float32": "<f4", "uint8": "u1", "int32": "<i4"}
_EXTENSIONS = {".fvecs": "float32", ".bvecs": "uint8", ".ivecs": "int32"}

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def _kind_for(path, kind):
    if kind is None:
        kind = _EXTENSIONS.get(Path(path).suffix.lower())
        if kind is None:
            raise InputError(f"cannot infer element kind of {path}; pass kind=")
    if kind not in KINDS:
        raise InputError(f"unknown element kind {kind!r}")
    return kind


def read_vectors(path, kind=None):
    """Load all records of a vector file into an (n, d) array."""
    kind = _kind_for(path, kind)
    elem = np.dtype(KINDS[kind])
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read vector file ({e.strerror})", path=path) from None
    if not raw:
        return np.empty((0, 0), dtype=elem.newbyteorder("="))
    if len(raw) < 4:
        raise FormatError("truncated record header", path=path, offset=0)
    d = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if d <= 0:
        raise FormatError(f"invalid dimension {d}", path=path, offset=0)
    rec = np.dtype([("dim", "<i4"), ("v", elem, (d,))])
    n = len(raw) // rec.itemsize
    table = np.frombuffer(raw, dtype=rec, count=n)
    bad = np.flatnonzero(table["dim"] != d)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"record {i} has dimension {int(table['dim'][i])}, expected {d}",
                          path=path, offset=i * rec.itemsize)
    if n * rec.itemsize != len(raw):
        raise FormatError(f"truncated record {n} ({len(raw) - n * rec.itemsize} of "
                          f"{rec.itemsize} bytes)", path=path, offset=n * rec.itemsize)
    return table["v"].astype(elem.newbyteorder("="))


def write_vectors(path, vectors, kind=None):
    kind = _kind_for(path, kind)
    vectors = np.asarray(vectors)
    if vectors.ndim != 2:
        raise InputError("vectors must be a 2-d array")
    n, d = vectors.shape
    rec = np.dtype([("dim", "<i4"), ("v", KINDS[kind], (d,))])
    table = np.empty(n, dtype=rec)
    table["dim"] = d
    table["v"] = vectors
    Path(path).write_bytes(table.tobytes())


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Exact neighbours per query, nearest first; shape (n_queries, R)."""

    ids: np.ndarray
    distances: np.ndarray

    @property
    def nearest(self):
        return self.ids[:, 0]


def brute_force_knn(queries, database, R):
    """Exact squared-Euclidean top-``R`` neighbours; ties go to the lower id."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    database = np.atleast_2d(np.asarray(database, dtype=np.float64))
    if queries.shape[1] != database.shape[1]:
        raise InputError(f"query dimension {queries.shape[1]} != database dimension "
                         f"{database.shape[1]}")
    n = database.shape[0]
    if R > n:
        log.warning("R=%d exceeds database size %d; clamping", R, n)
        R = n
    ids = np.empty((queries.shape[0], R), dtype=np.int64)
    dists = np.empty((queries.shape[0], R))
    step = 16
    for s in range(0, queries.shape[0], step):
        dd = squared_distances(queries[s:s + step], database)
        order = np.argsort(dd, axis=1, kind="stable")[:, :R]
        ids[s:s + step] = order
        dists[s:s + step] = np.take_along_axis(dd, order, axis=1)
    return GroundTruth(ids, dists)


def recall_at_r(ranked, truth, R_values):
    """Fraction of queries whose true nearest neighbour is in the top ``R``."""
    nearest = np.asarray(truth.nearest if isinstance(truth, GroundTruth) else truth)
    ranked = list(ranked)
    if len(ranked) != nearest.shape[0]:
        raise InputError(f"{len(ranked)} ranked lists for {nearest.shape[0]} queries")
    out = {}
    for R in R_values:
        hits = sum(int(nn in list(r[:R])) for r, nn in zip(ranked, nearest.tolist()))
        out[R] = hits / len(ranked) if ranked else 0.0
    return out


class PrPoint(NamedTuple):
    threshold: float
    precision: float
    recall: float
    recall_defined: bool = True


def pr_curve(scores, labels, thresholds, higher_is_similar=True):
    """Precision/recall of pair predictions at each threshold.

    With ``higher_is_similar`` (collision counts) a pair is predicted
    positive when its score is strictly above the threshold; otherwise
    (Hamming distances) when it is at or below. No predicted positives gives
    precision 1.0; no true positives gives recall 0.0 with
    ``recall_defined=False``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise InputError("need exactly one label per scored pair")
    n_pos = int(labels.sum())
    points = []
    for t in thresholds:
        pred = scores > t if higher_is_similar else scores <= t
        tp = int(np.count_nonzero(pred & labels))
        n_pred = int(np.count_nonzero(pred))
        precision = tp / n_pred if n_pred else 1.0
        if n_pos:
            points.append(PrPoint(t, precision, tp / n_pos, True))
        else:
            points.append(PrPoint(t, precision, 0.0, False))
    return points


def same_group_labels(groups):
    """Upper-triangle pair labels (i < j, row-major) from per-item group ids.

    A negative group id marks an item that belongs to no group.
    """
    g = np.asarray(groups)
    iu, ju = np.triu_indices(g.size, k=1)
    return (g[iu] == g[ju]) & (g[iu] >= 0)


def upper_pairs(matrix):
    """Flatten the strict upper triangle of a square pair matrix, row-major."""
    matrix = np.asarray(matrix)
    iu, ju = np.triu_indices(matrix.shape[0], k=1)
    return matrix[iu, ju]


def lsh_codes(vectors, bits, seed=0):
    """Signs of seeded Gaussian random projections, bit-packed per row."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if not 1 <= bits <= 8192:
        raise InputError(f"bits must be in [1, 8192], got {bits}")
    proj = np.random.default_rng(seed).standard_normal((vectors.shape[1], bits))
    return np.packbits(vectors @ proj > 0, axis=1)


def pca_e_codes(vectors, basis, bits=None):
    """Signs of mean-centred projections on the leading ``bits`` PCA axes."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if vectors.shape[1] != basis.dim:
        raise InputError(f"vector dimension {vectors.shape[1]} != basis dimension {basis.dim}")
    bits = basis.dim if bits is None else bits
    if not 1 <= bits <= basis.dim:
        raise InputError(f"PCA-E uses at most {basis.dim} bits, got {bits}")
    return np.packbits(basis.project(vectors, bits) > 0, axis=1)


def hamming(a, b):
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise InputError("codes differ in length")
    return int(_POPCOUNT[np.bitwise_xor(a, b)].sum())


def hamming_matrix(codes):
    """All-pairs Hamming distances of bit-packed codes, shape (n, n)."""
    codes = np.asarray(codes, dtype=np.uint8)
    n = codes.shape[0]
    out = np.empty((n, n), dtype=np.int64)
    step = max(1, (1 << 22) // max(1, n * codes.shape[1]))
    for s in range(0, n, step):
        out[s:s + step] = _POPCOUNT[codes[s:s + step, None, :] ^ codes[None, :, :]].sum(axis=2)
    return out


def write_table_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
