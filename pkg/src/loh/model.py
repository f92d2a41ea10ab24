"""Multi-LOPQ model: training, encoding into coarse/fine codes, LOH triplets.

A vector is first rotated by a global variance-balancing PCA and split in
two halves. Each half is quantized by its own coarse codebook; the residual
to the chosen coarse centroid is rotated by that cluster's local rotation,
and the two rotated residuals are concatenated and product-quantized with a
single global set of ``m`` sub-quantizers.

Indices are 0-based throughout.
"""

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import quantization as qz
from .errors import FormatError, InputError

MODEL_MAGIC = b"LOHM"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIQ")


@dataclass(frozen=True)
class LohParams:
    """Model shape and training knobs.

    d: input dimension; K: coarse centroids per half; m: fine subspaces over
    the whole vector (even, ``m/2`` per half); k: centroids per sub-quantizer.
    """

    d: int
    K: int
    m: int
    k: int
    kmeans_iters: int = 30
    seed: int = 0

    def __post_init__(self):
        for name in ("d", "K", "m", "k"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.d % 2:
            raise InputError(f"d={self.d} must be even")
        if self.m % 2:
            raise InputError(f"m={self.m} must be even")
        if (self.d // 2) % (self.m // 2):
            raise InputError(f"d/2={self.d // 2} is not divisible by m/2={self.m // 2}")
        if self.kmeans_iters < 0:
            raise InputError("kmeans_iters must be >= 0")
        if self.seed < 0:
            raise InputError("seed must be >= 0")

    @property
    def half(self):
        return self.d // 2

    @property
    def subdim(self):
        return self.d // self.m


class LohCode(NamedTuple):
    """One flattened LOH code: (governing coarse code, position, fine code)."""

    coarse: int
    position: int
    fine: int


@dataclass(frozen=True)
class EncodedPoint:
    id: int
    coarse: tuple
    fine: tuple

    def __post_init__(self):
        coarse = tuple(int(c) for c in self.coarse)
        fine = tuple(int(f) for f in self.fine)
        if len(coarse) != 2:
            raise InputError("coarse codes must be a pair")
        if not fine or len(fine) % 2:
            raise InputError("fine codes must have even, non-zero length")
        if min(coarse) < 0 or min(fine) < 0:
            raise InputError("codes must be nonnegative")
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "coarse", coarse)
        object.__setattr__(self, "fine", fine)

    @property
    def m(self):
        return len(self.fine)


@dataclass(frozen=True, eq=False)
class LohModel:
    """Trained quantizer state. Arrays are stored as float32."""

    params: LohParams
    global_mean: np.ndarray
    global_rotation: np.ndarray
    coarse_codebooks: tuple
    local_rotations: np.ndarray
    subquantizers: tuple

    def __eq__(self, other):
        if not isinstance(other, LohModel):
            return NotImplemented
        return (self.params == other.params
                and _same(self.global_mean, other.global_mean)
                and _same(self.global_rotation, other.global_rotation)
                and all(a == b for a, b in zip(self.coarse_codebooks, other.coarse_codebooks))
                and _same(self.local_rotations, other.local_rotations)
                and all(a == b for a, b in zip(self.subquantizers, other.subquantizers)))

    __hash__ = None

    @cached_property
    def _mean64(self):
        return self.global_mean.astype(np.float64)

    @cached_property
    def _rot64(self):
        return self.global_rotation.astype(np.float64)

    @cached_property
    def _coarse64(self):
        return [cb.centroids.astype(np.float64) for cb in self.coarse_codebooks]

    @cached_property
    def _local64(self):
        return self.local_rotations.astype(np.float64)

    @cached_property
    def _sub64(self):
        return [cb.centroids.astype(np.float64) for cb in self.subquantizers]

    def rotate(self, data):
        """Apply the global variance-balancing transform."""
        data = np.asarray(data, dtype=np.float64)
        if data.shape[-1] != self.params.d:
            raise InputError(f"vector dimension {data.shape[-1]} != model dimension {self.params.d}")
        return (data - self._mean64) @ self._rot64.T

    def coarse_distances(self, rotated):
        """Squared distances of each half to every coarse centroid, two (n, K) arrays."""
        rotated = np.atleast_2d(rotated)
        h = self.params.half
        return [qz.squared_distances(rotated[:, j * h:(j + 1) * h], self._coarse64[j])
                for j in range(2)]

    def local_residual(self, rotated, c1, c2):
        """Locally rotated residual of one rotated vector w.r.t. cell (c1, c2)."""
        h = self.params.half
        parts = []
        for j, c in enumerate((c1, c2)):
            r = rotated[j * h:(j + 1) * h] - self._coarse64[j][c]
            parts.append(self._local64[j, c] @ r)
        return np.concatenate(parts)

    def fine_codes(self, residual):
        """Fine codes of locally rotated residuals, shape (n, m)."""
        residual = np.atleast_2d(residual)
        s = self.params.subdim
        codes = np.empty((residual.shape[0], self.params.m), dtype=np.int64)
        for j, cent in enumerate(self._sub64):
            codes[:, j], _ = qz.assign(residual[:, j * s:(j + 1) * s], cent)
        return codes


def _same(a, b):
    return a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)


def _f32_codebook(cb):
    return qz.Codebook(cb.centroids.astype(np.float32), distortions=cb.distortions)


def train(data, params, local_rotations=True):
    """Train a Multi-LOPQ model.

    Steps: global PCA with eigenvalue allocation into two halves; K-means
    per half for the coarse codebooks; per coarse cluster, PCA of its
    residuals with eigenvalue allocation into ``m/2`` groups gives the local
    rotation; finally ``m`` global sub-quantizers are trained on the pooled
    locally rotated residuals.

    ``local_rotations=False`` keeps every local rotation at the identity,
    which is the ablation used to check that local optimisation pays off.

    Seeds: coarse half ``j`` uses ``seed + 1 + j``; sub-quantizer ``j``
    uses ``seed + 3 + j``.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.d:
        raise InputError(f"training data must have shape (n, {params.d})")
    n = X.shape[0]
    if n < max(params.K, params.k, 2):
        raise InputError(f"need at least max(K, k, 2) = {max(params.K, params.k, 2)} "
                         f"training vectors, got {n}")
    if not np.all(np.isfinite(X)):
        raise InputError("training data contains non-finite values")

    h, K, half_m = params.half, params.K, params.m // 2
    basis = qz.pca(X)
    global_rotation = qz.allocation_rotation(basis, 2).astype(np.float32)
    global_mean = basis.mean.astype(np.float32)
    Xt = (X - global_mean.astype(np.float64)) @ global_rotation.astype(np.float64).T

    coarse = []
    rotations = np.empty((2, K, h, h), dtype=np.float32)
    residuals = np.empty((n, params.d))
    for j in range(2):
        half = Xt[:, j * h:(j + 1) * h]
        cb = _f32_codebook(qz.kmeans(half, K, params.kmeans_iters, params.seed + 1 + j))
        coarse.append(cb)
        labels, _ = qz.assign(half, cb.centroids)
        for i in range(K):
            members = labels == i
            r = half[members] - cb.centroids[i].astype(np.float64)
            if local_rotations and members.sum() >= 2:
                rot = qz.allocation_rotation(qz.pca(r), half_m)
            else:
                rot = np.eye(h)
            rotations[j, i] = rot
            residuals[members, j * h:(j + 1) * h] = r @ rotations[j, i].astype(np.float64).T

    subq = qz.train_subquantizers(residuals, params.m, params.k,
                                  params.kmeans_iters, params.seed + 3)
    return LohModel(
        params=params,
        global_mean=global_mean,
        global_rotation=global_rotation,
        coarse_codebooks=tuple(coarse),
        local_rotations=rotations,
        subquantizers=tuple(_f32_codebook(cb) for cb in subq),
    )


def encode_many(model, data):
    """Coarse codes (n, 2) and fine codes (n, m) for every row of ``data``."""
    Xt = np.atleast_2d(model.rotate(data))
    h = model.params.half
    d1, d2 = model.coarse_distances(Xt)
    coarse = np.stack([np.argmin(d1, axis=1), np.argmin(d2, axis=1)], axis=1)
    resid = np.empty_like(Xt)
    for j in range(2):
        c = coarse[:, j]
        r = Xt[:, j * h:(j + 1) * h] - model._coarse64[j][c]
        resid[:, j * h:(j + 1) * h] = np.einsum("nab,nb->na", model._local64[j][c], r)
    return coarse, model.fine_codes(resid)


def encode(model, x, id=0):
    """Encode a single vector into an :class:`EncodedPoint`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("encode takes a single vector; use encode_points for batches")
    coarse, fine = encode_many(model, x[None, :])
    return EncodedPoint(id, tuple(coarse[0]), tuple(fine[0]))


def encode_points(model, data, ids=None):
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if ids is None:
        ids = range(data.shape[0])
    ids = list(ids)
    if len(ids) != data.shape[0]:
        raise InputError("ids and vectors differ in length")
    coarse, fine = encode_many(model, data)
    return [EncodedPoint(i, tuple(c), tuple(f)) for i, c, f in zip(ids, coarse.tolist(), fine.tolist())]


def reconstruct(model, coarse, fine):
    """Approximation of the globally rotated vectors from their codes."""
    coarse = np.atleast_2d(np.asarray(coarse, dtype=np.int64))
    fine = np.atleast_2d(np.asarray(fine, dtype=np.int64))
    h = model.params.half
    resid = qz.product_decode(fine, model.subquantizers)
    out = np.empty_like(resid)
    for j in range(2):
        c = coarse[:, j]
        back = np.einsum("nba,nb->na", model._local64[j][c], resid[:, j * h:(j + 1) * h])
        out[:, j * h:(j + 1) * h] = model._coarse64[j][c] + back
    return out


def quantization_distortion(model, data):
    """Total squared error between rotated vectors and their reconstructions.

    Local rotations are orthogonal, so this equals the fine-stage distortion
    of the locally rotated residuals.
    """
    coarse, fine = encode_many(model, data)
    diff = np.atleast_2d(model.rotate(data)) - reconstruct(model, coarse, fine)
    return float(np.einsum("nd,nd->", diff, diff))


def flatten(p):
    """Split a point into its ``m`` LOH triplets.

    The first ``m/2`` positions are governed by ``c1``, the rest by ``c2``.
    """
    half = p.m // 2
    c1, c2 = p.coarse
    return [LohCode(c1 if j < half else c2, j, f) for j, f in enumerate(p.fine)]


def unflatten(codes, id=0):
    codes = sorted(codes, key=lambda c: c.position)
    m = len(codes)
    if m == 0 or m % 2 or [c.position for c in codes] != list(range(m)):
        raise InputError(f"triplets for id {id} do not cover positions 0..m-1 exactly once")
    first = {c.coarse for c in codes[:m // 2]}
    second = {c.coarse for c in codes[m // 2:]}
    if len(first) != 1 or len(second) != 1:
        raise InputError(f"triplets for id {id} carry inconsistent coarse codes")
    return EncodedPoint(id, (first.pop(), second.pop()), tuple(c.fine for c in codes))


def loh_similarity(a, b):
    """Number of positions where two points collide on coarse and fine code."""
    if a.m != b.m:
        raise InputError(f"points have different code lengths ({a.m} vs {b.m})")
    half = a.m // 2
    score = 0
    for part in range(2):
        if a.coarse[part] != b.coarse[part]:
            continue
        lo = part * half
        score += sum(x == y for x, y in zip(a.fine[lo:lo + half], b.fine[lo:lo + half]))
    return score


def pairwise_similarity(coarse, fine):
    """Dense matrix of LOH similarities between all rows, shape (n, n)."""
    coarse = np.asarray(coarse)
    fine = np.asarray(fine)
    n, m = fine.shape
    half = m // 2
    out = np.zeros((n, n), dtype=np.int64)
    for part in range(2):
        same = coarse[:, part, None] == coarse[None, :, part]
        for j in range(part * half, (part + 1) * half):
            out += same & (fine[:, j, None] == fine[None, :, j])
    return out


def _model_blocks(model):
    return [
        model.global_mean,
        model.global_rotation,
        *(cb.centroids for cb in model.coarse_codebooks),
        model.local_rotations,
        *(cb.centroids for cb in model.subquantizers),
    ]


def _block_shapes(p):
    h, s = p.half, p.subdim
    return ([(p.d,), (p.d, p.d), (p.K, h), (p.K, h), (2, p.K, h, h)]
            + [(p.k, s)] * p.m)


def save_model(model, path):
    """Write ``model`` in the versioned little-endian ``LOHM`` format."""
    p = model.params
    head = _HEADER.pack(MODEL_MAGIC, MODEL_VERSION, p.d, p.K, p.m, p.k, p.kmeans_iters, p.seed)
    with open(path, "wb") as f:
        f.write(head)
        for block in _model_blocks(model):
            f.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def load_model(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read model file ({e.strerror})", path=path) from None
    if len(raw) < 4 or raw[:4] != MODEL_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {MODEL_MAGIC!r}", path=path, offset=0)
    if len(raw) < _HEADER.size:
        raise FormatError("truncated header", path=path, offset=len(raw))
    _, version, d, K, m, k, iters, seed = _HEADER.unpack_from(raw)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version} (expected {MODEL_VERSION})",
                          path=path, offset=4)
    try:
        params = LohParams(d, K, m, k, iters, seed)
    except InputError as e:
        raise FormatError(f"invalid parameters: {e}", path=path, offset=8) from None
    shapes = _block_shapes(params)
    need = _HEADER.size + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != need:
        what = "truncated" if len(raw) < need else "trailing bytes in"
        raise FormatError(f"{what} model body ({len(raw)} bytes, expected {need})",
                          path=path, offset=min(len(raw), need))
    blocks, off = [], _HEADER.size
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(np.float32)
        blocks.append(arr.reshape(shape))
        off += 4 * count
    mean, rot, e1, e2, local, *subs = blocks
    try:
        return LohModel(params, mean, rot, (qz.Codebook(e1), qz.Codebook(e2)), local,
                        tuple(qz.Codebook(s) for s in subs))
    except InputError as e:
        raise FormatError(f"invalid model contents: {e}", path=path) from None
