"""
loh: locally optimized hashing
==============================

Multi-LOPQ quantization codes used as hash codes. Similarity between two
encoded vectors is a count of shared ``(coarse, position, fine)`` triplets,
so search, multi-query recommendation and clustering reduce to set
intersections and sums.

Submodules:

- ``quantization``: k-means, PCA, eigenvalue allocation, product quantizers.
- ``model``: training, encoding, triplets, the collision similarity.
- ``index``: inverted multi-index with multi-sequence traversal and
  weighted ranking.
- ``batch``: score pooling and the join/group/count pipeline for query sets.
- ``cluster``: match-graph clustering, stoplists, real-time dedup.
- ``io_eval``: vector files, exact ground truth, metrics, LSH/PCA-E codes.
- ``synthetic``: seeded datasets.
"""

from .errors import FormatError, InputError, LohError
from .model import (
    EncodedPoint,
    LohCode,
    LohModel,
    LohParams,
    encode,
    encode_many,
    encode_points,
    flatten,
    load_model,
    loh_similarity,
    save_model,
    train,
    unflatten,
)
from .index import SearchParams, build_index, load_index, multi_sequence, save_index, search
from .batch import batch_search, pool, search_set
from .cluster import build_stoplist, dedup, loh_cluster

__version__ = "0.1.0"
