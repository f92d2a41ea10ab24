"""Seeded synthetic datasets for experiments and tests."""

import numpy as np

from .quantization import squared_distances

#: bisection steps used to calibrate the duplicate jitter
CALIBRATION_STEPS = 14


def gaussian_mixture(n, d, components, seed=0, spread=1.0, scale=0.25):
    """``n`` points from an isotropic mixture; returns (vectors, component ids).

    Component centres are drawn from N(0, spread^2) and every component has
    per-dimension standard deviation ``scale``.
    """
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, spread, size=(components, d))
    labels = rng.integers(components, size=n)
    return centres[labels] + rng.normal(0.0, scale, size=(n, d)), labels


def nn_group_accuracy(vectors, groups):
    """Share of grouped items whose nearest other item is in their group."""
    vectors = np.asarray(vectors, dtype=np.float64)
    groups = np.asarray(groups)
    dd = squared_distances(vectors, vectors)
    np.fill_diagonal(dd, np.inf)
    nn = np.argmin(dd, axis=1)
    grouped = groups >= 0
    return float(np.mean(groups[nn[grouped]] == groups[grouped]))


def duplicate_fixture(n_groups=100, copies=5, n_decoys=500, d=32, noise=None, seed=0,
                      min_accuracy=0.99):
    """Near-duplicate groups plus random decoys, all in [-1, 1]^d.

    Each group is a uniform base vector and ``copies`` Gaussian-jittered
    copies of it; decoys get group id -1. With ``noise=None`` the jitter is
    calibrated by bisection on [0, 1] to the largest level at which the
    exact nearest neighbour of a grouped item still lies in its own group
    at least ``min_accuracy`` of the time.

    Returns ``(vectors, groups, noise)``; items are shuffled.
    """
    rng = np.random.default_rng(seed)
    bases = rng.uniform(-1.0, 1.0, size=(n_groups, d))
    unit_jitter = rng.normal(size=(n_groups * copies, d))
    decoys = rng.uniform(-1.0, 1.0, size=(n_decoys, d))
    order = rng.permutation(n_groups * copies + n_decoys)
    groups = np.concatenate([np.repeat(np.arange(n_groups), copies),
                             np.full(n_decoys, -1)])[order]

    def build(sigma):
        dup = np.repeat(bases, copies, axis=0) + sigma * unit_jitter
        return np.vstack([dup, decoys])[order]

    if noise is None:
        lo, hi = 0.0, 1.0
        for _ in range(CALIBRATION_STEPS):
            mid = 0.5 * (lo + hi)
            if nn_group_accuracy(build(mid), groups) >= min_accuracy:
                lo = mid
            else:
                hi = mid
        noise = lo
    return build(noise), groups, noise
