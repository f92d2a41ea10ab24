"""Graph clustering and deduplication on LOH triplets.

Documents sharing a triplet land in the same group; every pair inside a
group gets one match. Pairs whose match count is strictly greater than the
threshold ``t`` are joined by an edge and clusters are the connected
components of that graph.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass
from itertools import combinations

from .errors import InputError
from .model import flatten

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 3
DEFAULT_MAX_GROUP = 10_000
DEFAULT_DEDUP_LIMIT = 100_000


@dataclass(frozen=True)
class Stoplist:
    """Triplets whose corpus frequency is below ``min_count`` or above ``max_count``."""

    banned: frozenset
    min_count: int = 0
    max_count: float = math.inf

    def __contains__(self, code):
        return code in self.banned

    def __len__(self):
        return len(self.banned)


@dataclass(frozen=True)
class Clustering:
    """Disjoint clusters, each a sorted tuple of ids, ordered by smallest id."""

    components: tuple

    @property
    def labels(self):
        """Map from document id to its cluster label (the cluster's smallest id)."""
        return {doc: comp[0] for comp in self.components for doc in comp}

    def __len__(self):
        return len(self.components)


@dataclass(frozen=True)
class DedupResult:
    clustering: Clustering
    representatives: list
    representative_of: dict


def build_stoplist(docs, min_count=0, max_count=math.inf):
    if min_count > max_count:
        raise InputError(f"min_count ({min_count}) exceeds max_count ({max_count})")
    freq = Counter(code for d in docs for code in flatten(d))
    banned = frozenset(c for c, n in freq.items() if n < min_count or n > max_count)
    return Stoplist(banned, min_count, max_count)


def group_by_triplet(docs, stoplist=None):
    """Map each (non-banned) triplet to the ids of the documents carrying it."""
    groups = {}
    seen = set()
    for d in docs:
        if d.id in seen:
            raise InputError(f"duplicate document id {d.id}")
        seen.add(d.id)
        for code in flatten(d):
            if stoplist is not None and code in stoplist:
                continue
            groups.setdefault(code, []).append(d.id)
    return groups


def pair_match_counts(docs, stoplist=None, max_group=DEFAULT_MAX_GROUP):
    """Number of shared triplets for every co-occurring pair, keyed (min, max)."""
    counts = Counter()
    for code, ids in group_by_triplet(docs, stoplist).items():
        if len(ids) < 2:
            continue
        if max_group is not None and len(ids) > max_group:
            log.warning("skipping triplet %s shared by %d documents (max_group=%d)",
                        tuple(code), len(ids), max_group)
            continue
        counts.update(combinations(sorted(ids), 2))
    return counts


def connected_components(nodes, edges):
    """Union-find components; unknown endpoints are an error."""
    parent = {n: n for n in nodes}

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for a, b in edges:
        if a not in parent or b not in parent:
            raise InputError(f"edge ({a}, {b}) references an unknown node")
        ra, rb = find(a), find(b)
        if ra != rb:
            # the smaller id becomes the root
            if rb < ra:
                ra, rb = rb, ra
            parent[rb] = ra

    comps = {}
    for n in parent:
        comps.setdefault(find(n), []).append(n)
    return Clustering(tuple(sorted(tuple(sorted(c)) for c in comps.values())))


def threshold_edges(counts, t):
    return [pair for pair, n in counts.items() if n > t]


def loh_cluster(docs, t=DEFAULT_THRESHOLD, stoplist=None, max_group=DEFAULT_MAX_GROUP):
    """Cluster documents whose LOH similarity exceeds ``t``, transitively."""
    if t < 0:
        raise InputError(f"threshold must be >= 0, got {t}")
    docs = list(docs)
    counts = pair_match_counts(docs, stoplist, max_group)
    return connected_components([d.id for d in docs], threshold_edges(counts, t))


def dedup(hits, t=DEFAULT_THRESHOLD, max_size=DEFAULT_DEDUP_LIMIT):
    """Collapse near-duplicates in a ranked result list.

    The representative of each cluster is its best-ranked (earliest) member
    and ``representatives`` keeps the input ranking.
    """
    hits = list(hits)
    if len(hits) > max_size:
        raise InputError(f"{len(hits)} documents exceed the dedup bound of {max_size}; "
                         "use loh_cluster for large collections")
    clustering = loh_cluster(hits, t)
    labels = clustering.labels
    first = {}
    reps = []
    for h in hits:
        lab = labels[h.id]
        if lab not in first:
            first[lab] = h.id
            reps.append(h.id)
    rep_of = {h.id: first[labels[h.id]] for h in hits}
    return DedupResult(clustering, reps, rep_of)


def write_clusters_tsv(clustering, path):
    """``cluster_id <TAB> doc_id`` rows; the cluster id is its smallest member."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for comp in clustering.components:
            for doc in comp:
                f.write(f"{comp[0]}\t{doc}\n")
