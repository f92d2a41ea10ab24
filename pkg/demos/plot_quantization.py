"""
Quantizing vectors with Multi-LOPQ
==================================

Train a model on a Gaussian mixture, look at what the codes are made of,
and compare the distortion against a model without local rotations.
"""

import numpy as np

from loh import model, quantization
from loh.synthetic import gaussian_mixture

X, _ = gaussian_mixture(5000, 32, 40, seed=0)
params = model.LohParams(d=32, K=16, m=8, k=16, kmeans_iters=20, seed=0)
mdl = model.train(X, params)

# Every vector becomes two coarse codes and m fine codes
p = model.encode(mdl, X[0], id=0)
print("coarse:", p.coarse, "fine:", p.fine)

# Flattened, the same point is a list of (coarse, position, fine) triplets
for code in model.flatten(p):
    print("  ", code)

# Local rotations align each cluster's residuals before fine quantization
full = model.quantization_distortion(mdl, X)
plain = model.quantization_distortion(model.train(X, params, local_rotations=False), X)
print(f"distortion with local rotations {full:.1f}, identity rotations {plain:.1f}")

# Eigenvalue allocation spreads variance evenly over subspaces
ev = np.array([8.0, 4.0, 2.0, 1.0])
print("allocation of", ev, "->", quantization.eigenvalue_allocation(ev, 2, 2).buckets)
