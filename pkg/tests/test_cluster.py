import logging
import random
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loh import cluster as cl
from loh import model as lm
from loh.errors import InputError
from loh.model import EncodedPoint

from conftest import random_point


def bfs_components(nodes, edges):
    adj = {n: [] for n in nodes}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen, comps = set(), []
    for n in nodes:
        if n in seen:
            continue
        seen.add(n)
        comp, queue = [], deque([n])
        while queue:
            x = queue.popleft()
            comp.append(x)
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    queue.append(y)
        comps.append(tuple(sorted(comp)))
    return tuple(sorted(comps))


def cluster_oracle(docs, t, banned=frozenset()):
    edges = []
    for i, a in enumerate(docs):
        ta = set(lm.flatten(a)) - banned
        for b in docs[i + 1:]:
            if len(ta & set(lm.flatten(b))) > t:
                edges.append((a.id, b.id))
    return bfs_components([d.id for d in docs], edges)


def near_dup_docs(rng, n_groups=30, copies=4, n_noise=60, m=8, K=4, k=8, flips=2):
    docs, next_id = [], 0
    for _ in range(n_groups):
        base = random_point(rng, 0, m=m, K=K, k=k)
        for _ in range(copies):
            fine = list(base.fine)
            for j in rng.choice(m, size=flips, replace=False):
                fine[j] = int(rng.integers(k))
            docs.append(EncodedPoint(next_id, base.coarse, fine))
            next_id += 1
    for _ in range(n_noise):
        docs.append(random_point(rng, next_id, m=m, K=K, k=k))
        next_id += 1
    return docs


def test_identical_docs_cluster():
    a = EncodedPoint(3, (0, 1), (1, 2, 3, 4))
    b = EncodedPoint(8, (0, 1), (1, 2, 3, 4))
    got = cl.loh_cluster([a, b], t=3)
    assert got.components == ((3, 8),)
    assert got.labels == {3: 3, 8: 3}


def test_threshold_is_strict():
    a = EncodedPoint(0, (0, 0), (1, 2, 3, 4))
    b = EncodedPoint(1, (0, 0), (1, 2, 3, 9))
    assert lm.loh_similarity(a, b) == 3
    assert cl.loh_cluster([a, b], t=3).components == ((0,), (1,))
    assert cl.loh_cluster([a, b], t=2).components == ((0, 1),)


def test_transitive_clusters():
    a = EncodedPoint(0, (0, 0), (1, 1, 1, 1, 0, 0, 0, 0))
    b = EncodedPoint(1, (0, 0), (1, 1, 1, 1, 2, 2, 2, 2))
    c = EncodedPoint(2, (0, 0), (3, 3, 3, 3, 2, 2, 2, 2))
    assert lm.loh_similarity(a, c) == 0
    assert cl.loh_cluster([c, a, b], t=3).components == ((0, 1, 2),)


def test_negative_threshold_and_duplicates():
    with pytest.raises(InputError):
        cl.loh_cluster([], t=-1)
    p = EncodedPoint(0, (0, 0), (1, 2))
    with pytest.raises(InputError, match="duplicate"):
        cl.loh_cluster([p, p])


def test_cluster_matches_bfs_oracle(rng):
    docs = near_dup_docs(rng)
    for t in (0, 2, 3, 5):
        assert cl.loh_cluster(docs, t).components == cluster_oracle(docs, t)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cluster_order_invariant(seed):
    rng = np.random.default_rng(seed)
    docs = near_dup_docs(rng, n_groups=8, n_noise=20)
    shuffled = list(docs)
    random.Random(seed).shuffle(shuffled)
    assert cl.loh_cluster(docs).components == cl.loh_cluster(shuffled).components


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 7))
def test_raising_threshold_refines(seed, t):
    docs = near_dup_docs(np.random.default_rng(seed), n_groups=8, n_noise=20)
    coarse = cl.loh_cluster(docs, t).labels
    for comp in cl.loh_cluster(docs, t + 1).components:
        assert len({coarse[d] for d in comp}) == 1


def test_stoplist_refines_and_matches_oracle(rng):
    docs = near_dup_docs(rng)
    stop = cl.build_stoplist(docs, min_count=2, max_count=6)
    stopped = cl.loh_cluster(docs, 3, stoplist=stop)
    assert stopped.components == cluster_oracle(docs, 3, banned=stop.banned)
    plain = cl.loh_cluster(docs, 3).labels
    for comp in stopped.components:
        assert len({plain[d] for d in comp}) == 1


def test_max_group_skips_with_warning(caplog):
    docs = [EncodedPoint(i, (0, 0), (1, 1, 1, 1)) for i in range(5)]
    with caplog.at_level(logging.WARNING, logger="loh.cluster"):
        got = cl.loh_cluster(docs, t=0, max_group=4)
    assert len(got) == 5
    assert "max_group=4" in caplog.text


def test_build_stoplist_example():
    docs = [EncodedPoint(0, (0, 0), (1, 2)), EncodedPoint(1, (0, 0), (1, 3)), EncodedPoint(2, (0, 0), (1, 4))]
    stop = cl.build_stoplist(docs, max_count=2)
    assert set(stop.banned) == {(0, 0, 1)}
    rare = cl.build_stoplist(docs, min_count=2)
    assert set(rare.banned) == {(0, 1, 2), (0, 1, 3), (0, 1, 4)}
    assert len(cl.build_stoplist(docs)) == 0
    with pytest.raises(InputError):
        cl.build_stoplist(docs, min_count=3, max_count=1)


def test_pair_counts_are_intersections(rng):
    docs = near_dup_docs(rng, n_groups=10, n_noise=10)
    counts = cl.pair_match_counts(docs)
    for i, a in enumerate(docs):
        for b in docs[i + 1:]:
            assert counts.get((a.id, b.id), 0) == lm.loh_similarity(a, b)


# --- connected components -----------------------------------------------

def test_components_examples():
    got = cl.connected_components([1, 2, 3, 4, 5], [(2, 1), (4, 5)])
    assert got.components == ((1, 2), (3,), (4, 5))
    assert cl.connected_components([], []).components == ()
    with pytest.raises(InputError):
        cl.connected_components([1], [(1, 2)])


def test_components_bfs_oracle_10k():
    rng = np.random.default_rng(0)
    nodes = list(range(10_000))
    edges = [tuple(map(int, e)) for e in rng.integers(10_000, size=(6_000, 2))]
    assert cl.connected_components(nodes, edges).components == bfs_components(nodes, edges)


# --- dedup ---------------------------------------------------------------

def test_dedup_distinct_docs_are_singletons():
    docs = [EncodedPoint(i, (i, i), (i, i, i, i)) for i in range(5)]
    res = cl.dedup(docs)
    assert res.representatives == [0, 1, 2, 3, 4]
    assert all(len(c) == 1 for c in res.clustering.components)


def test_dedup_representative_is_first_in_ranking():
    a = EncodedPoint(9, (0, 0), (1, 2, 3, 4))
    b = EncodedPoint(2, (0, 0), (1, 2, 3, 4))
    c = EncodedPoint(5, (1, 1), (0, 0, 0, 0))
    res = cl.dedup([a, c, b])
    assert res.representatives == [9, 5]
    assert res.representative_of == {9: 9, 5: 5, 2: 9}
    assert res.clustering.labels[9] == 2


def test_dedup_matches_cluster(rng):
    docs = near_dup_docs(rng)
    res = cl.dedup(docs)
    assert res.clustering == cl.loh_cluster(docs)
    assert len(res.representatives) == len(res.clustering)


def test_dedup_bound():
    docs = [EncodedPoint(i, (0, 0), (0, 0)) for i in range(3)]
    with pytest.raises(InputError, match="loh_cluster"):
        cl.dedup(docs, max_size=2)


def test_clusters_tsv(tmp_path):
    path = tmp_path / "c.tsv"
    cl.write_clusters_tsv(cl.Clustering(((1, 4), (2,))), path)
    assert path.read_text() == "1\t1\n1\t4\n2\t2\n"
