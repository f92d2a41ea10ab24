"""Multi-query search: score pooling and the flattened-triplet join pipeline.

The join pipeline runs on :func:`run_stages`, a small local map/shuffle/
reduce runner. Every stage partitions its input by key, reduces each key
group independently (optionally on several threads) and merges the results
in key order, so output never depends on the number of workers.
"""

import csv
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .errors import InputError, LohError
from .model import LohCode, flatten

SUM = "sum"
MAX = "max"


class FlatRecord(NamedTuple):
    """One row of a flattened code file: who owns it, which vector, which code."""

    owner_id: int
    member_id: int
    code: LohCode


@dataclass(frozen=True)
class PooledScores:
    set_id: object
    entries: list = field(default_factory=list)

    def top(self, n):
        return PooledScores(self.set_id, self.entries[:n])


class StageError(LohError):
    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass(frozen=True)
class Stage:
    """Shuffle rows by ``key(row)`` then call ``reduce(key, rows)`` per group.

    Keys must be totally ordered and have a stable ``repr``; within a group
    rows keep their input order.
    """

    name: str
    key: Callable
    reduce: Callable


def _partition_of(key, parallelism):
    return zlib.crc32(repr(key).encode()) % parallelism


def _reduce_partition(stage, rows):
    groups = {}
    for row in rows:
        groups.setdefault(stage.key(row), []).append(row)
    return [(k, list(stage.reduce(k, groups[k]))) for k in sorted(groups)]


def run_stages(plan, rows, parallelism=1):
    """Run ``plan`` over ``rows`` and return the last stage's output rows."""
    if parallelism < 1:
        raise InputError("parallelism must be >= 1")
    rows = list(rows)
    for stage in plan:
        try:
            parts = [[] for _ in range(parallelism)]
            for row in rows:
                parts[_partition_of(stage.key(row), parallelism)].append(row)
            if parallelism == 1:
                done = [_reduce_partition(stage, parts[0])]
            else:
                with ThreadPoolExecutor(max_workers=parallelism) as pool:
                    done = list(pool.map(lambda p: _reduce_partition(stage, p), parts))
            merged = sorted((item for part in done for item in part), key=lambda kv: kv[0])
            rows = [out for _, outs in merged for out in outs]
        except StageError:
            raise
        except Exception as e:
            raise StageError(stage.name, e) from e
    return rows


def _join(code, rows):
    queries = [r for r in rows if r[0] == "q"]
    for r in rows:
        if r[0] != "d":
            continue
        for q in queries:
            yield (q[1], r[1], q[2], code)


def _count(key, rows):
    yield (key[0], key[1], len(rows))


BATCH_PLAN = (
    Stage("join", key=lambda r: r[-1], reduce=_join),
    Stage("group", key=lambda r: (r[0], r[1]), reduce=lambda key, rows: [(key, rows)]),
    Stage("count", key=lambda r: r[0], reduce=lambda key, rows: _count(key, rows[0][1])),
    Stage("order", key=lambda r: (r[0], -r[2], r[1]), reduce=lambda key, rows: rows),
)


def _check_record(rec, i, what):
    try:
        owner, member, code = rec
        code = LohCode(*code)
        ok = all(isinstance(v, int) and v >= 0 for v in (owner, member, *code))
    except (TypeError, ValueError):
        ok = False
    if not ok:
        raise InputError(f"malformed {what} record at index {i}: {rec!r}")
    return FlatRecord(owner, member, code)


def batch_search(queries, documents, parallelism=1, stoplist=None, top=None):
    """Collision counts between every query set and every document.

    Query and document records are joined on the full triplet, grouped by
    (set, document) and counted, so a set's score for a document is the sum
    of the LOH similarities of its members. Returns one
    :class:`PooledScores` per set, sets ascending, each sorted by count
    descending then document id ascending. ``top`` truncates every list
    after ordering.
    """
    rows = []
    for i, rec in enumerate(queries):
        rec = _check_record(rec, i, "query")
        if stoplist is None or rec.code not in stoplist:
            rows.append(("q", rec.owner_id, rec.member_id, rec.code))
    for i, rec in enumerate(documents):
        rec = _check_record(rec, i, "document")
        if stoplist is None or rec.code not in stoplist:
            rows.append(("d", rec.owner_id, rec.code))

    out = []
    for set_id, doc_id, n in run_stages(BATCH_PLAN, rows, parallelism):
        if not out or out[-1].set_id != set_id:
            out.append(PooledScores(set_id, []))
        out[-1].entries.append((doc_id, n))
    if top is not None:
        out = [p.top(top) for p in out]
    return out


def pool(per_member_scores, mode=SUM, set_id=None):
    """Combine per-member ``{doc: score}`` maps into one ranked list.

    ``sum`` adds the scores of the members that returned a document; ``max``
    keeps the best one.
    """
    if mode not in (SUM, MAX):
        raise InputError(f"unknown pooling mode {mode!r}")
    pooled = {}
    for scores in per_member_scores.values():
        for doc, s in scores.items():
            if doc in pooled:
                pooled[doc] = pooled[doc] + s if mode == SUM else max(pooled[doc], s)
            else:
                pooled[doc] = s
    entries = sorted(pooled.items(), key=lambda kv: (-kv[1], kv[0]))
    return PooledScores(set_id, entries)


def search_set(index, vectors, params, mode=SUM, set_id=None):
    """Query the index with every vector of a set and pool the weighted scores."""
    from .index import search

    per_member = {}
    for i, v in enumerate(vectors):
        per_member[i] = {h.id: h.score for h in search(index, v, params)}
    return pool(per_member, mode, set_id)


def flat_records(points, owner=None):
    """Flattened rows of encoded points; ``owner`` defaults to each point's id."""
    rows = []
    for p in points:
        o = p.id if owner is None else owner
        rows.extend(FlatRecord(o, p.id, code) for code in flatten(p))
    return rows


def write_flat_tsv(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(f"{r.owner_id}\t{r.member_id}\t{r.code.coarse}\t{r.code.position}\t{r.code.fine}\n")


def read_flat_tsv(path):
    records = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            try:
                if len(fields) != 5:
                    raise ValueError
                owner, member, coarse, pos, fine = (int(x) for x in fields)
                if min(owner, member, coarse, pos, fine) < 0:
                    raise ValueError
            except ValueError:
                raise InputError(f"{path}: line {lineno}: malformed record {line!r}") from None
            records.append(FlatRecord(owner, member, LohCode(coarse, pos, fine)))
    return records


def write_scores_csv(pooled, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["set_id", "doc_id", "score"])
        for p in pooled:
            for doc, score in p.entries:
                w.writerow([p.set_id, doc, repr(score) if isinstance(score, float) else score])
