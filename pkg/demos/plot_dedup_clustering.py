"""
Near-duplicate clustering and result deduplication
==================================================

Documents sharing more than t triplets are linked; clusters are the
connected components. Dedup keeps the best-ranked member of each cluster.
"""

import time

from loh import cluster, model
from loh.synthetic import duplicate_fixture

X, groups, noise = duplicate_fixture(seed=0)
print(f"jitter calibrated to {noise:.4f}")
mdl = model.train(X, model.LohParams(d=32, K=16, m=8, k=16, seed=0))
docs = model.encode_points(mdl, X)

for t in (1, 2, 3):
    c = cluster.loh_cluster(docs, t=t)
    multi = [comp for comp in c.components if len(comp) > 1]
    print(f"t={t}: {len(c)} clusters, {len(multi)} with more than one document")

# Frequent triplets carry little information; a stoplist drops them
stop = cluster.build_stoplist(docs, max_count=10)
print("stoplist size", len(stop), "->", len(cluster.loh_cluster(docs, t=1, stoplist=stop)), "clusters")

start = time.perf_counter()
res = cluster.dedup(docs, t=3)
print(f"dedup kept {len(res.representatives)} of {len(docs)} in "
      f"{1000 * (time.perf_counter() - start):.1f} ms")
