"""
Nearest-neighbour search on the multi-index
===========================================

Index a database, rank candidates by cell weight plus collision count,
and measure recall against exact ground truth.
"""

from loh import index, io_eval, model
from loh.synthetic import gaussian_mixture

D, _ = gaussian_mixture(10_100, 32, 64, seed=0)
base, queries = D[:10_000], D[10_000:]

mdl = model.train(base, model.LohParams(d=32, K=16, m=8, k=16, seed=0))
idx = index.build_index(mdl, model.encode_points(mdl, base))
print(f"{len(idx)} points in {len(idx.cells)} non-empty cells")

# The first few cells visited for one query, nearest first
d1, d2 = mdl.coarse_distances(mdl.rotate(queries[0]))
for cand, _ in zip(index.multi_sequence(d1[0], d2[0]), range(5)):
    print("  cell", cand.cell, "distance", round(cand.d_c, 3))

# Search visits cells until T points are collected, then ranks them
params = index.SearchParams(T=1000)
hits = index.search(idx, queries[0], params)
for h in hits[:5]:
    print(f"  id {h.id:5d}  score {h.score:.3f}  collisions {h.sigma_h}")

ranked = [[h.id for h in index.search(idx, q, params)] for q in queries]
truth = io_eval.brute_force_knn(queries, base, 1)
print("recall@R:", io_eval.recall_at_r(ranked, truth, [1, 10, 100, 1000]))
