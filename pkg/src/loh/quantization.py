"""Numerical building blocks: k-means, PCA, eigenvalue allocation and
product quantizers with symmetric/asymmetric distance tables.

All training arithmetic runs in float64. Assignment ties always resolve to
the lowest centroid index.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)

#: log-value used for zero eigenvalues in the allocation objective
LOG_FLOOR = math.log(1e-10)

#: relative distortion improvement under which k-means stops
KMEANS_TOL = 1e-4

# Exact search over balanced partitions is used below this many candidates.
_EXACT_ALLOCATION_LIMIT = 200_000
# Elements per chunk when materialising (n, k, d) difference tensors.
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True, eq=False)
class Codebook:
    """A set of ``count`` centroids of dimension ``dim``.

    ``distortions`` holds the k-means objective after every assignment step
    when the codebook came out of :func:`kmeans`; it is empty otherwise.
    """

    centroids: np.ndarray
    distortions: tuple = field(default=(), compare=False)

    def __post_init__(self):
        c = np.asarray(self.centroids)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise InputError(f"centroids must be a non-empty 2-d array, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InputError("centroids contain non-finite values")
        object.__setattr__(self, "centroids", c)

    @property
    def count(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return (self.centroids.dtype == other.centroids.dtype
                and np.array_equal(self.centroids, other.centroids))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PcaBasis:
    """Mean plus eigen-decomposition of the sample covariance.

    Columns of ``eigenvectors`` are ordered by descending ``eigenvalues``.
    """

    mean: np.ndarray
    eigenvectors: np.ndarray
    eigenvalues: np.ndarray

    @property
    def dim(self):
        return self.mean.shape[0]

    def project(self, data, ncomp=None):
        """Coordinates of mean-centred ``data`` on the leading ``ncomp`` axes."""
        data = np.asarray(data, dtype=np.float64)
        vecs = self.eigenvectors if ncomp is None else self.eigenvectors[:, :ncomp]
        return (data - self.mean) @ vecs

    def reconstruct(self, coords):
        coords = np.asarray(coords, dtype=np.float64)
        ncomp = coords.shape[-1]
        return coords @ self.eigenvectors[:, :ncomp].T + self.mean


@dataclass(frozen=True)
class Allocation:
    """Assignment of dimensions to equally sized buckets.

    ``buckets[b]`` lists the original dimension indices placed in bucket
    ``b``. ``order`` is the concatenation of all buckets, i.e. the original
    index found at each bucket-ordered position, and ``permutation`` is its
    inverse: ``permutation[i]`` is the position original index ``i`` moves to.
    """

    buckets: tuple

    @property
    def order(self):
        return np.array([i for b in self.buckets for i in b], dtype=np.int64)

    @property
    def permutation(self):
        order = self.order
        perm = np.empty_like(order)
        perm[order] = np.arange(order.size)
        return perm


@dataclass(frozen=True, eq=False)
class SdcTable:
    """Per-subspace squared distances between sub-centroids, shape (m, k, k)."""

    tables: np.ndarray

    @property
    def m(self):
        return self.tables.shape[0]

    @property
    def k(self):
        return self.tables.shape[1]


def _as_matrix(data, name="data"):
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InputError(f"{name} must be a list of vectors")
    return arr


def squared_distances(data, centroids):
    """Exact squared Euclidean distances between rows, shape (n, k).

    Differences are formed explicitly (no norm expansion) so equal distances
    compare equal and argmin tie-breaking is reliable.
    """
    data = np.asarray(data, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    n, d = data.shape
    k = centroids.shape[0]
    out = np.empty((n, k), dtype=np.float64)
    step = max(1, _CHUNK_ELEMS // max(1, k * d))
    for start in range(0, n, step):
        diff = data[start:start + step, None, :] - centroids[None, :, :]
        out[start:start + step] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def assign(data, centroids):
    """Nearest centroid index and its squared distance for every row."""
    dists = squared_distances(data, centroids)
    labels = np.argmin(dists, axis=1)
    return labels, dists[np.arange(labels.size), labels]


def _kmeanspp_init(data, k, rng):
    n = data.shape[0]
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    closest = squared_distances(data, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen center; any pick is as good
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = data[idx]
        closest = np.minimum(closest, squared_distances(data, centers[c:c + 1])[:, 0])
    return centers


def _update_centroids(data, labels, sqdist, centers):
    k, d = centers.shape
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, d))
    np.add.at(sums, labels, data)
    new = centers.copy()
    nonempty = counts > 0
    new[nonempty] = sums[nonempty] / counts[nonempty, None]
    empty = np.flatnonzero(~nonempty)
    if empty.size:
        # reseed from the worst-served points, farthest first
        far = np.argsort(-sqdist, kind="stable")
        for c, idx in zip(empty, far):
            new[c] = data[idx]
    return new


def kmeans(data, k, max_iters=50, seed=0):
    """Lloyd's k-means with k-means++ seeding.

    Returns a :class:`Codebook` whose ``distortions`` trace records the
    total squared error after each assignment. The trace is non-increasing
    and the result depends only on ``data``, ``k``, ``max_iters`` and
    ``seed``.
    """
    data = _as_matrix(data)
    n = data.shape[0]
    if n == 0 or data.shape[1] == 0:
        raise InputError("kmeans needs non-empty data")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if k > n:
        raise InputError(f"k={k} exceeds the number of points ({n})")

    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(data, k, rng)
    labels, sqdist = assign(data, centers)
    trace = [float(sqdist.sum())]
    for _ in range(max_iters):
        centers = _update_centroids(data, labels, sqdist, centers)
        labels, sqdist = assign(data, centers)
        cur = float(sqdist.sum())
        prev = trace[-1]
        trace.append(cur)
        if prev <= 0 or (prev - cur) / prev < KMEANS_TOL:
            break
    return Codebook(centers, distortions=tuple(trace))


def pca(data):
    """Principal axes of ``data`` (sample covariance, ``n - 1`` normalisation).

    Eigenvectors are sign-normalised so their largest-magnitude entry is
    positive; tiny negative eigenvalues from round-off are clamped to zero.
    """
    data = _as_matrix(data)
    n, d = data.shape
    if n < 2:
        raise InputError(f"pca needs at least 2 points, got {n}")
    if d < 1:
        raise InputError("pca needs d >= 1")
    mean = data.mean(axis=0)
    centred = data - mean
    cov = centred.T @ centred / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    idx = np.argsort(-vals, kind="stable")
    vals = np.clip(vals[idx], 0.0, None)
    vecs = vecs[:, idx]
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(d)])
    signs[signs == 0] = 1.0
    vecs = vecs * signs
    return PcaBasis(mean=mean, eigenvectors=vecs, eigenvalues=vals)


def _log_eigen(values):
    values = np.asarray(values, dtype=np.float64)
    out = np.full(values.shape, LOG_FLOOR)
    pos = values > 0
    out[pos] = np.maximum(np.log(values[pos]), LOG_FLOOR)
    return out


def allocation_cost(eigenvalues, buckets):
    """Largest bucket log-product; the quantity allocation minimises."""
    logs = _log_eigen(eigenvalues)
    return max(float(sum(logs[i] for i in b)) for b in buckets)


def _greedy_allocation(logs, num_buckets, bucket_size):
    buckets = [[] for _ in range(num_buckets)]
    totals = [0.0] * num_buckets
    for i in np.argsort(-logs, kind="stable"):
        open_ = [b for b in range(num_buckets) if len(buckets[b]) < bucket_size]
        # an empty bucket always comes first, which keeps the rule scale-free
        b = min(open_, key=lambda b: (len(buckets[b]) > 0, totals[b], b))
        buckets[b].append(int(i))
        totals[b] += logs[i]
    return buckets


def _balanced_partitions(items, num_buckets, bucket_size):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for combo in itertools.combinations(rest, bucket_size - 1):
        group = (first,) + combo
        taken = set(combo)
        remaining = [i for i in rest if i not in taken]
        for tail in _balanced_partitions(remaining, num_buckets - 1, bucket_size):
            yield [list(group)] + tail


def _partition_count(num_buckets, bucket_size):
    total = 1
    left = num_buckets * bucket_size
    for _ in range(num_buckets):
        total *= math.comb(left - 1, bucket_size - 1)
        left -= bucket_size
    return total


def _swap_refine(logs, buckets):
    """Pairwise swaps that strictly lower the sorted bucket-sum profile."""
    sums = [float(sum(logs[i] for i in b)) for b in buckets]
    improved = True
    while improved:
        improved = False
        worst = max(range(len(buckets)), key=lambda b: (sums[b], -b))
        for other in range(len(buckets)):
            if other == worst:
                continue
            for a_pos, a in enumerate(buckets[worst]):
                for b_pos, b in enumerate(buckets[other]):
                    delta = logs[a] - logs[b]
                    if delta <= 1e-12:
                        continue
                    if sums[other] + delta < sums[worst] - 1e-12:
                        buckets[worst][a_pos], buckets[other][b_pos] = b, a
                        sums[worst] -= delta
                        sums[other] += delta
                        improved = True
                        break
                if improved:
                    break
            if improved:
                break
    return buckets


def eigenvalue_allocation(eigenvalues, num_buckets, bucket_size):
    """Spread dimensions over buckets so bucket variance products balance.

    Eigenvalues are taken in descending order and each goes to the open
    bucket with the smallest running log-product (zero eigenvalues add
    :data:`LOG_FLOOR`). Small problems are then checked against an exact
    search over all balanced partitions, larger ones are polished with
    improving swaps.
    """
    ev = np.asarray(eigenvalues, dtype=np.float64).ravel()
    if num_buckets < 1 or bucket_size < 1:
        raise InputError("num_buckets and bucket_size must be positive")
    if ev.size != num_buckets * bucket_size:
        raise InputError(
            f"{ev.size} eigenvalues cannot fill {num_buckets} buckets of {bucket_size}")
    if np.any(ev < -1e-9):
        raise InputError("eigenvalues must be nonnegative")
    logs = _log_eigen(ev)
    buckets = _greedy_allocation(logs, num_buckets, bucket_size)
    best = max(sum(logs[i] for i in b) for b in buckets)

    if num_buckets > 1 and _partition_count(num_buckets, bucket_size) <= _EXACT_ALLOCATION_LIMIT:
        items = [int(i) for i in np.argsort(-logs, kind="stable")]
        for cand in _balanced_partitions(items, num_buckets, bucket_size):
            cost = max(sum(logs[i] for i in b) for b in cand)
            if cost < best - 1e-12:
                best, buckets = cost, cand
    elif num_buckets > 1:
        buckets = _swap_refine(logs, buckets)

    return Allocation(tuple(tuple(sorted(b)) for b in buckets))


def allocation_rotation(basis, num_buckets):
    """Rows of the PCA basis reordered into ``num_buckets`` balanced groups.

    Applying the returned matrix to a centred vector gives its principal
    coordinates laid out bucket by bucket.
    """
    d = basis.dim
    if d % num_buckets:
        raise InputError(f"dimension {d} is not divisible by {num_buckets}")
    alloc = eigenvalue_allocation(basis.eigenvalues, num_buckets, d // num_buckets)
    return basis.eigenvectors[:, alloc.order].T


def train_subquantizers(residuals, m, k, max_iters=50, seed=0):
    """One k-means codebook per contiguous ``d/m`` slice.

    Slice ``j`` is clustered with seed ``seed + j``.
    """
    residuals = _as_matrix(residuals, "residuals")
    if residuals.shape[0] == 0:
        raise InputError("no residuals to train on")
    d = residuals.shape[1]
    if m < 1 or d % m:
        raise InputError(f"dimension {d} is not divisible by m={m}")
    sub = d // m
    return [kmeans(residuals[:, j * sub:(j + 1) * sub], k, max_iters, seed + j)
            for j in range(m)]


def quantize_subvector(x, cb):
    """Index of the centroid nearest to ``x``; ties go to the lowest index."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != cb.dim:
        raise InputError(f"subvector has dimension {x.shape[0]}, codebook {cb.dim}")
    diff = cb.centroids.astype(np.float64) - x
    return int(np.argmin(np.einsum("kd,kd->k", diff, diff)))


def product_encode(data, subquantizers):
    """Fine codes of every row of ``data`` under a product quantizer, (n, m)."""
    data = _as_matrix(data)
    m = len(subquantizers)
    sub = subquantizers[0].dim
    if data.shape[1] != m * sub:
        raise InputError(f"data has dimension {data.shape[1]}, quantizer expects {m * sub}")
    codes = np.empty((data.shape[0], m), dtype=np.int64)
    for j, cb in enumerate(subquantizers):
        codes[:, j], _ = assign(data[:, j * sub:(j + 1) * sub], cb.centroids)
    return codes


def product_decode(codes, subquantizers):
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    return np.hstack([cb.centroids[codes[:, j]].astype(np.float64)
                      for j, cb in enumerate(subquantizers)])


def build_sdc_table(subquantizers):
    tables = []
    for cb in subquantizers:
        c = cb.centroids.astype(np.float64)
        diff = c[:, None, :] - c[None, :, :]
        tables.append(np.einsum("ijd,ijd->ij", diff, diff))
    ks = {t.shape[0] for t in tables}
    if len(ks) != 1:
        raise InputError("all sub-quantizers must have the same number of centroids")
    return SdcTable(np.stack(tables))


def _check_codes(codes, m, k):
    codes = np.asarray(codes, dtype=np.int64).ravel()
    if codes.size != m:
        raise InputError(f"expected {m} codes, got {codes.size}")
    if np.any(codes < 0) or np.any(codes >= k):
        raise InputError(f"codes out of range [0, {k})")
    return codes


def sdc_distance(fx, fy, table):
    """Symmetric distance between two fine-code tuples via table lookups."""
    fx = _check_codes(fx, table.m, table.k)
    fy = _check_codes(fy, table.m, table.k)
    return float(table.tables[np.arange(table.m), fx, fy].sum())


def adc_distance(y, fx, subquantizers):
    """Asymmetric distance from a raw vector to a product-quantized one."""
    m = len(subquantizers)
    fx = _check_codes(fx, m, subquantizers[0].count)
    y = np.asarray(y, dtype=np.float64).ravel()
    sub = subquantizers[0].dim
    if y.size != m * sub:
        raise InputError(f"vector has dimension {y.size}, quantizer expects {m * sub}")
    total = 0.0
    for j, cb in enumerate(subquantizers):
        diff = y[j * sub:(j + 1) * sub] - cb.centroids[fx[j]].astype(np.float64)
        total += float(diff @ diff)
    return total
