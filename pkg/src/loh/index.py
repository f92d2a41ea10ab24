"""Inverted multi-index over (c1, c2) cells and weighted LOH ranking."""

import heapq
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FormatError, InputError

INDEX_MAGIC = b"LOHI"
INDEX_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIQQ")
_DIRENT = struct.Struct("<QQQ")


class CellCandidate(NamedTuple):
    cell: tuple
    d_c: float


class RankedHit(NamedTuple):
    id: int
    score: float
    sigma_h: int
    cell: tuple


@dataclass(frozen=True)
class SearchParams:
    """Search quota and cell-weight shape.

    ``tau=None`` means the scale is the mean cell distance over the cells
    visited for the query.
    """

    T: int = 1000
    beta: float = 1.0
    tau: float = None

    def __post_init__(self):
        if self.T < 1:
            raise InputError(f"T must be >= 1, got {self.T}")
        if self.beta < 0:
            raise InputError("beta must be >= 0")
        if self.tau is not None and self.tau <= 0:
            raise InputError("tau must be > 0")


@dataclass(frozen=True, eq=False)
class CellList:
    ids: np.ndarray
    fine: np.ndarray

    def __len__(self):
        return self.ids.shape[0]


@dataclass(frozen=True, eq=False)
class MultiIndex:
    model: object
    cells: dict
    total_count: int

    def __len__(self):
        return self.total_count

    def cell_of(self, id):
        for cell, lst in self.cells.items():
            if np.any(lst.ids == id):
                return cell
        raise KeyError(id)


def build_index(model, points):
    """Group encoded points into their (c1, c2) cells, keeping input order."""
    m = model.params.m
    seen = set()
    grouped = {}
    for p in points:
        if p.id in seen:
            raise InputError(f"duplicate id {p.id}")
        if p.m != m:
            raise InputError(f"point {p.id} has {p.m} fine codes, model uses {m}")
        seen.add(p.id)
        grouped.setdefault(p.coarse, []).append(p)
    cells = {
        cell: CellList(np.array([p.id for p in pts], dtype=np.uint64),
                       np.array([p.fine for p in pts], dtype=np.int64))
        for cell, pts in grouped.items()
    }
    return MultiIndex(model, cells, len(seen))


def multi_sequence(dists1, dists2):
    """Yield every cell once, in nondecreasing ``dists1[c1] + dists2[c2]``.

    Equal sums come out in (c1, c2) lexicographic order.
    """
    d1 = np.asarray(dists1, dtype=np.float64)
    d2 = np.asarray(dists2, dtype=np.float64)
    o1 = np.lexsort((np.arange(d1.size), d1))
    o2 = np.lexsort((np.arange(d2.size), d2))
    n1, n2 = o1.size, o2.size
    if n1 == 0 or n2 == 0:
        return

    def entry(i, j):
        c1, c2 = int(o1[i]), int(o2[j])
        return (float(d1[c1] + d2[c2]), c1, c2, i, j)

    heap = [entry(0, 0)]
    popped = set()
    while heap:
        d_c, c1, c2, i, j = heapq.heappop(heap)
        popped.add((i, j))
        yield CellCandidate((c1, c2), d_c)
        # a cell enters the frontier once both grid predecessors are out
        if i + 1 < n1 and (j == 0 or (i + 1, j - 1) in popped):
            heapq.heappush(heap, entry(i + 1, j))
        if j + 1 < n2 and (i == 0 or (i - 1, j + 1) in popped):
            heapq.heappush(heap, entry(i, j + 1))


def cell_weight(d_c, params=None, *, beta=None, tau=None):
    """Exponential cell weight ``beta * exp(-d_c / tau)``."""
    if params is not None:
        beta = params.beta if beta is None else beta
        tau = params.tau if tau is None else tau
    beta = 1.0 if beta is None else beta
    if tau is None or tau <= 0:
        raise InputError(f"tau must be > 0, got {tau}")
    if d_c < 0:
        raise InputError("d_c must be >= 0")
    return beta * float(np.exp(-d_c / tau))


def visit_cells(index, rotated_query, T):
    """Non-empty cells in multi-sequence order until at least ``T`` points."""
    d1, d2 = index.model.coarse_distances(rotated_query)
    visited, count = [], 0
    for cand in multi_sequence(d1[0], d2[0]):
        lst = index.cells.get(cand.cell)
        if lst is None:
            continue
        visited.append((cand, lst))
        count += len(lst)
        if count >= T:
            break
    return visited


def search(index, query, params=SearchParams()):
    """Rank the points of the visited cells by ``w_c + sigma_h``.

    The query's fine codes are recomputed for each visited cell, since its
    residual depends on that cell's coarse centroids. Hits are sorted by
    score, then collision count, descending, then id ascending.
    """
    model = index.model
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1 or query.shape[0] != model.params.d:
        raise InputError(f"query must be a vector of dimension {model.params.d}")
    xt = model.rotate(query)
    visited = visit_cells(index, xt, params.T)
    if not visited:
        return []
    tau = params.tau
    if tau is None:
        tau = float(np.mean([cand.d_c for cand, _ in visited]))
        if tau <= 0:
            # every visited cell sits at distance zero; weights are all beta
            tau = 1.0

    ids, scores, sigmas, cells = [], [], [], []
    for cand, lst in visited:
        c1, c2 = cand.cell
        q = model.fine_codes(model.local_residual(xt, c1, c2))[0]
        sigma = (lst.fine == q).sum(axis=1)
        w = cell_weight(max(cand.d_c, 0.0), beta=params.beta, tau=tau)
        ids.append(lst.ids)
        sigmas.append(sigma)
        scores.append(w + sigma)
        cells.extend([cand.cell] * len(lst))
    ids = np.concatenate(ids)
    scores = np.concatenate(scores)
    sigmas = np.concatenate(sigmas)
    order = np.lexsort((ids, -sigmas, -scores))
    return [RankedHit(int(ids[i]), float(scores[i]), int(sigmas[i]), cells[i]) for i in order]


def save_index(index, path):
    """Write ``index`` in the little-endian ``LOHI`` format.

    Layout: header, a directory of (cell id, record offset, record count)
    with cell id ``c1 * K + c2``, then packed (u64 id, m fine codes)
    records. Fine codes take one byte each when k <= 256, two otherwise.
    """
    p = index.model.params
    code_bytes = 1 if p.k <= 256 else 2
    code_dtype = "<u1" if code_bytes == 1 else "<u2"
    rec = np.dtype([("id", "<u8"), ("fine", code_dtype, (p.m,))])
    with open(path, "wb") as f:
        f.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, p.K, p.m, p.k, code_bytes,
                             len(index.cells), index.total_count))
        offset = 0
        for (c1, c2), lst in index.cells.items():
            f.write(_DIRENT.pack(c1 * p.K + c2, offset, len(lst)))
            offset += len(lst)
        for lst in index.cells.values():
            records = np.empty(len(lst), dtype=rec)
            records["id"] = lst.ids
            records["fine"] = lst.fine
            f.write(records.tobytes())


def load_index(path, model):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read index file ({e.strerror})", path=path) from None
    if raw[:4] != INDEX_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {INDEX_MAGIC!r}", path=path, offset=0)
    if len(raw) < _HEADER.size:
        raise FormatError("truncated header", path=path, offset=len(raw))
    _, version, K, m, k, code_bytes, n_cells, total = _HEADER.unpack_from(raw)
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported index version {version}", path=path, offset=4)
    p = model.params
    if (K, m, k) != (p.K, p.m, p.k):
        raise FormatError(f"index built for K={K}, m={m}, k={k}; model has "
                          f"K={p.K}, m={p.m}, k={p.k}", path=path, offset=8)
    if code_bytes not in (1, 2):
        raise FormatError(f"invalid code width {code_bytes}", path=path, offset=20)
    code_dtype = "<u1" if code_bytes == 1 else "<u2"
    rec = np.dtype([("id", "<u8"), ("fine", code_dtype, (m,))])
    body = _HEADER.size + n_cells * _DIRENT.size
    need = body + total * rec.itemsize
    if len(raw) != need:
        raise FormatError(f"file has {len(raw)} bytes, expected {need}",
                          path=path, offset=min(len(raw), need))
    records = np.frombuffer(raw, dtype=rec, count=total, offset=body)
    cells = {}
    for n in range(n_cells):
        cell_id, offset, count = _DIRENT.unpack_from(raw, _HEADER.size + n * _DIRENT.size)
        if offset + count > total or cell_id >= K * K:
            raise FormatError("directory entry out of range", path=path,
                              offset=_HEADER.size + n * _DIRENT.size)
        chunk = records[offset:offset + count]
        cells[(int(cell_id // K), int(cell_id % K))] = CellList(
            chunk["id"].astype(np.uint64), chunk["fine"].astype(np.int64))
    return MultiIndex(model, cells, int(total))
