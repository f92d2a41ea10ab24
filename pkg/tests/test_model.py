import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loh import model as lm
from loh import quantization as qz
from loh.errors import FormatError, InputError
from loh.model import EncodedPoint, LohCode, LohParams
from loh.synthetic import gaussian_mixture


def encode_oracle(mdl, x):
    """Straight-line encoding with explicit loops, independent of encode_many."""
    p = mdl.params
    mean = mdl.global_mean.astype(np.float64)
    rot = mdl.global_rotation.astype(np.float64)
    xt = [sum(rot[r, c] * (x[c] - mean[c]) for c in range(p.d)) for r in range(p.d)]
    coarse, residual = [], []
    for j in range(2):
        half = xt[j * p.half:(j + 1) * p.half]
        cents = mdl.coarse_codebooks[j].centroids.astype(np.float64)
        dists = [sum((half[i] - c[i]) ** 2 for i in range(p.half)) for c in cents]
        c = dists.index(min(dists))
        coarse.append(c)
        r = [half[i] - cents[c][i] for i in range(p.half)]
        R = mdl.local_rotations[j, c].astype(np.float64)
        residual += [sum(R[a, b] * r[b] for b in range(p.half)) for a in range(p.half)]
    fine = []
    s = p.subdim
    for j, cb in enumerate(mdl.subquantizers):
        sub = residual[j * s:(j + 1) * s]
        dists = [sum((sub[i] - c[i]) ** 2 for i in range(s)) for c in cb.centroids.astype(np.float64)]
        fine.append(dists.index(min(dists)))
    return tuple(coarse), tuple(fine)


points = st.builds(
    lambda id, c, f: EncodedPoint(id, c, f),
    st.integers(0, 1000),
    st.tuples(st.integers(0, 3), st.integers(0, 3)),
    st.lists(st.integers(0, 3), min_size=8, max_size=8).map(tuple),
)


# --- params --------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    dict(d=15, K=4, m=4, k=4),
    dict(d=16, K=4, m=3, k=4),
    dict(d=12, K=4, m=8, k=4),
    dict(d=16, K=0, m=4, k=4),
    dict(d=16, K=4, m=4, k=4, seed=-1),
])
def test_params_rejected(kwargs):
    with pytest.raises(InputError):
        LohParams(**kwargs)


def test_params_shape():
    p = LohParams(d=32, K=16, m=8, k=16)
    assert (p.half, p.subdim) == (16, 4)


# --- training ------------------------------------------------------------

def test_train_k1_reduces_to_opq_per_half(mixture):
    params = LohParams(d=16, K=1, m=4, k=8, kmeans_iters=10, seed=0)
    mdl = lm.train(mixture, params)
    Xt = mdl.rotate(mixture)
    for j in range(2):
        half = Xt[:, j * 8:(j + 1) * 8]
        np.testing.assert_allclose(mdl.coarse_codebooks[j].centroids[0], half.mean(axis=0), atol=1e-5)
        resid = half - mdl.coarse_codebooks[j].centroids[0].astype(np.float64)
        expected = qz.allocation_rotation(qz.pca(resid), 2)
        np.testing.assert_allclose(mdl.local_rotations[j, 0], expected, atol=1e-5)
    coarse, _ = lm.encode_many(mdl, mixture)
    assert np.all(coarse == 0)


def test_train_deterministic(mixture, small_model):
    again = lm.train(mixture, small_model.params)
    assert again == small_model
    for a, b in zip(again.subquantizers, small_model.subquantizers):
        assert a.distortions == b.distortions


def test_rotations_orthogonal(small_model):
    g = small_model.global_rotation.astype(np.float64)
    np.testing.assert_allclose(g @ g.T, np.eye(16), atol=1e-5)
    for j in range(2):
        for R in small_model.local_rotations[j].astype(np.float64):
            np.testing.assert_allclose(R @ R.T, np.eye(8), atol=1e-5)


def test_model_arrays_are_float32(small_model):
    assert small_model.global_rotation.dtype == np.float32
    assert small_model.local_rotations.dtype == np.float32
    assert all(cb.centroids.dtype == np.float32 for cb in small_model.subquantizers)


def test_local_rotations_beat_identity_ablation():
    X, _ = gaussian_mixture(10_000, 8, 20, seed=1)
    params = LohParams(d=8, K=4, m=4, k=4, kmeans_iters=20, seed=0)
    full = lm.quantization_distortion(lm.train(X, params), X)
    ablated = lm.quantization_distortion(lm.train(X, params, local_rotations=False), X)
    assert full < ablated


def test_train_rejects_small_or_bad_input():
    params = LohParams(d=4, K=8, m=2, k=2)
    with pytest.raises(InputError):
        lm.train(np.zeros((4, 4)), params)
    with pytest.raises(InputError):
        lm.train(np.zeros((20, 6)), params)
    bad = np.zeros((20, 4))
    bad[3, 1] = np.nan
    with pytest.raises(InputError):
        lm.train(bad, params)


# --- encoding ------------------------------------------------------------

def test_encode_matches_oracle(small_model, mixture):
    for i in range(0, 3000, 150):
        p = lm.encode(small_model, mixture[i], id=i)
        assert (p.coarse, p.fine) == encode_oracle(small_model, mixture[i])
        assert p.id == i


def test_encode_coarse_centroid_gives_zero_residual_codes(small_model):
    cents = [cb.centroids.astype(np.float64) for cb in small_model.coarse_codebooks]
    rotated = np.concatenate([cents[0][2], cents[1][5]])
    x = rotated @ small_model.global_rotation.astype(np.float64) + small_model.global_mean
    p = lm.encode(small_model, x)
    assert p.coarse == (2, 5)
    zero_codes = tuple(qz.quantize_subvector(np.zeros(4), cb) for cb in small_model.subquantizers)
    assert p.fine == zero_codes


def test_encode_idempotent(small_model, mixture):
    a = lm.encode_points(small_model, mixture[:200])
    b = lm.encode_points(small_model, mixture[:200])
    assert a == b
    # batch and single encodings agree
    assert a[17] == lm.encode(small_model, mixture[17], id=17)


def test_encode_dimension_mismatch(small_model):
    with pytest.raises(InputError):
        lm.encode(small_model, np.zeros(15))


def test_distortion_is_reconstruction_error(small_model, mixture):
    coarse, fine = lm.encode_many(small_model, mixture[:300])
    recon = lm.reconstruct(small_model, coarse, fine)
    diff = small_model.rotate(mixture[:300]) - recon
    assert lm.quantization_distortion(small_model, mixture[:300]) == pytest.approx(float((diff ** 2).sum()))


# --- triplets and similarity --------------------------------------------

def test_flatten_example():
    p = EncodedPoint(0, (7, 9), (1, 2, 3, 4))
    assert lm.flatten(p) == [(7, 0, 1), (7, 1, 2), (9, 2, 3), (9, 3, 4)]
    assert all(isinstance(c, LohCode) for c in lm.flatten(p))


@settings(max_examples=100)
@given(points)
def test_flatten_round_trip(p):
    codes = lm.flatten(p)
    assert len(codes) == p.m
    assert lm.unflatten(reversed(codes), id=p.id) == p


def test_unflatten_rejects_inconsistent():
    with pytest.raises(InputError):
        lm.unflatten([LohCode(1, 0, 0), LohCode(2, 1, 0), LohCode(3, 2, 0), LohCode(3, 3, 0)])
    with pytest.raises(InputError):
        lm.unflatten([LohCode(1, 0, 0), LohCode(1, 0, 0)])


def test_similarity_examples():
    a = EncodedPoint(0, (1, 2), (5, 6, 7, 8))
    b = EncodedPoint(1, (1, 3), (5, 0, 7, 8))
    assert lm.loh_similarity(a, b) == 1
    assert lm.loh_similarity(a, a) == 4
    c = EncodedPoint(2, (1, 2), (5, 0, 7, 0))
    assert lm.loh_similarity(a, c) == 2
    disjoint = EncodedPoint(3, (0, 0), (5, 6, 7, 8))
    assert lm.loh_similarity(a, disjoint) == 0


def test_similarity_length_mismatch():
    with pytest.raises(InputError):
        lm.loh_similarity(EncodedPoint(0, (0, 0), (1, 2)), EncodedPoint(1, (0, 0), (1, 2, 3, 4)))


@settings(max_examples=200)
@given(points, points)
def test_similarity_is_triplet_intersection(a, b):
    s = lm.loh_similarity(a, b)
    assert s == lm.loh_similarity(b, a)
    assert 0 <= s <= a.m
    assert s == len(set(lm.flatten(a)) & set(lm.flatten(b)))
    assert lm.loh_similarity(a, a) == a.m


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_shared_coarse_sdc_counts(small_model, data):
    m, k = 4, 16
    table = qz.build_sdc_table(small_model.subquantizers)
    coarse = data.draw(st.tuples(st.integers(0, 7), st.integers(0, 7)))
    fa = data.draw(st.lists(st.integers(0, k - 1), min_size=m, max_size=m))
    fb = data.draw(st.lists(st.integers(0, k - 1), min_size=m, max_size=m))
    s = lm.loh_similarity(EncodedPoint(0, coarse, fa), EncodedPoint(1, coarse, fb))
    nonzero = sum(table.tables[j, fa[j], fb[j]] > 0 for j in range(m))
    assert m - s >= nonzero


def test_pairwise_similarity_matches_scalar(rng):
    pts = [EncodedPoint(i, tuple(rng.integers(3, size=2)), tuple(rng.integers(3, size=6)))
           for i in range(40)]
    mat = lm.pairwise_similarity([p.coarse for p in pts], [p.fine for p in pts])
    for i in range(40):
        for j in range(40):
            assert mat[i, j] == lm.loh_similarity(pts[i], pts[j])


# --- persistence ---------------------------------------------------------

def test_model_round_trip(small_model, tmp_path):
    path = tmp_path / "m.lohm"
    lm.save_model(small_model, path)
    loaded = lm.load_model(path)
    assert loaded == small_model
    lm.save_model(loaded, tmp_path / "again.lohm")
    assert (tmp_path / "again.lohm").read_bytes() == path.read_bytes()


def test_model_truncated(small_model, tmp_path):
    path = tmp_path / "m.lohm"
    lm.save_model(small_model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="truncated"):
        lm.load_model(path)
    path.write_bytes(raw + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        lm.load_model(path)


def test_model_bad_magic(small_model, tmp_path):
    path = tmp_path / "m.lohm"
    lm.save_model(small_model, path)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(FormatError, match="bad magic") as err:
        lm.load_model(path)
    assert str(path) in str(err.value)


def test_model_bad_version(small_model, tmp_path):
    path = tmp_path / "m.lohm"
    lm.save_model(small_model, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        lm.load_model(path)


def test_model_missing_file(tmp_path):
    with pytest.raises(FormatError, match="cannot read"):
        lm.load_model(tmp_path / "nope.lohm")
