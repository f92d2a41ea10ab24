"""
Recommending documents for sets of queries
==========================================

A user's collection is a set of vectors. Scoring every document against
the whole set is a join on triplets followed by group-and-count.
"""

from loh import batch, model
from loh.synthetic import gaussian_mixture

X, labels = gaussian_mixture(3000, 16, 8, seed=1)
mdl = model.train(X[:2000], model.LohParams(d=16, K=8, m=4, k=16, seed=0))

docs = model.encode_points(mdl, X[:2000])
# three "users", each holding ten vectors from the tail of the data
sets = {u: model.encode_points(mdl, X[2000 + 10 * u:2010 + 10 * u], ids=range(10 * u, 10 * u + 10))
        for u in range(3)}
queries = [r for u, pts in sets.items() for r in batch.flat_records(pts, owner=u)]

pooled = batch.batch_search(queries, batch.flat_records(docs), parallelism=4, top=5)
for p in pooled:
    print(f"user {p.set_id}:", p.entries)

# The same pooling on per-member score maps, summed or maxed
print(batch.pool({0: {1: 3, 2: 1}, 1: {1: 2}}, mode="sum").entries)
print(batch.pool({0: {1: 3, 2: 1}, 1: {1: 2}}, mode="max").entries)
