import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from face2parts.cache import FeatureCache, make_key
from face2parts.encoders import (TEST_STAT, EncoderSpec, FeatureStack, TestStatEncoder, available_encoders,
                                 encode, get_encoder, register_encoder, stack_features, subset_stack)
from face2parts.errors import (BackendFailure, CacheCorrupt, DimensionMismatch, EmptySubset, KeyNotFound,
                               MissingRegion, ShapeMismatch, UnknownEncoder, UnknownRegion)
from face2parts.regions import REGIONS, Region

SHAPE = (224, 224, 3)


def stat_oracle(crop):
    """Per-channel mean then population std, by explicit sums."""
    out = []
    flat = crop.reshape(-1, 3).astype(np.float64)
    n = len(flat)
    means = [sum(flat[:, c].tolist()) / n for c in range(3)]
    for c in range(3):
        out.append(means[c])
    for c in range(3):
        out.append((sum(((v - means[c]) ** 2 for v in flat[:, c].tolist())) / n) ** 0.5)
    return np.array(out)


# -- encode ------------------------------------------------------------------

def test_test_stat_examples():
    enc = TestStatEncoder()
    zero, half = encode([np.zeros(SHAPE), np.full(SHAPE, 0.5)], TEST_STAT, enc)
    np.testing.assert_array_equal(zero, np.zeros(6))
    np.testing.assert_array_equal(half, [0.5, 0.5, 0.5, 0, 0, 0])


def test_test_stat_matches_oracle():
    rng = np.random.default_rng(0)
    crops = [rng.uniform(size=SHAPE).astype(np.float32) for _ in range(3)]
    for crop, feat in zip(crops, encode(crops, TEST_STAT, TestStatEncoder())):
        np.testing.assert_allclose(feat, stat_oracle(crop), atol=1e-6)


def test_encode_order_and_length():
    rng = np.random.default_rng(1)
    crops = [np.full(SHAPE, v, np.float32) for v in rng.uniform(size=70)]
    feats = encode(crops, TEST_STAT, TestStatEncoder(), batch_size=16)
    assert len(feats) == 70
    for crop, f in zip(crops, feats):
        assert f[0] == pytest.approx(float(crop[0, 0, 0]), abs=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_test_stat_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    crop = rng.uniform(size=SHAPE).astype(np.float32)
    flat = crop.reshape(-1, 3)
    shuffled = flat[rng.permutation(len(flat))].reshape(SHAPE)
    a, b = encode([crop, shuffled], TEST_STAT, TestStatEncoder())
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_encode_errors():
    with pytest.raises(ShapeMismatch):
        encode([np.zeros((100, 100, 3))], TEST_STAT, TestStatEncoder())

    def broken(batch):
        raise RuntimeError("boom")

    with pytest.raises(BackendFailure, match="boom"):
        encode([np.zeros(SHAPE)], TEST_STAT, broken)
    with pytest.raises(BackendFailure):
        encode([np.zeros(SHAPE)], TEST_STAT, lambda b: np.zeros((len(b), 5)))
    with pytest.raises(BackendFailure):
        encode([np.zeros(SHAPE)], TEST_STAT, lambda b: np.full((len(b), 6), np.nan))


def test_temporal_spec_and_registry():
    spec = EncoderSpec("clip-avg", 6, "temporal", 4)
    assert spec.input_shape == (4, *SHAPE)
    register_encoder("clip-avg", lambda: (spec, TestStatEncoder()))
    got_spec, backend = get_encoder("clip-avg")
    clip = np.random.default_rng(0).uniform(size=(4, *SHAPE))
    (feat,) = encode([clip], got_spec, backend)
    np.testing.assert_allclose(feat[:3], clip.reshape(-1, 3).mean(0))
    assert "clip-avg" in available_encoders() and "test-stat" in available_encoders()
    with pytest.raises(UnknownEncoder):
        get_encoder("does-not-exist")
    with pytest.raises(ValueError):
        EncoderSpec("bad", 6, "spatial", 16)
    with pytest.raises(ValueError):
        EncoderSpec("bad", 0)


# -- stacking ----------------------------------------------------------------

def test_stack_canonical_order():
    eye = np.eye(6)
    scrambled = [5, 2, 0, 4, 1, 3]
    feats = {REGIONS[i]: eye[i] for i in scrambled}
    s = stack_features(feats, "test-stat")
    np.testing.assert_array_equal(s.rows, eye)
    assert s.region_ids == REGIONS
    assert [r.level for r in s.region_ids] == [1, 2, 3, 3, 3, 3]


def test_stack_missing_region_and_dims():
    feats = {r: np.zeros(6) for r in REGIONS[:5]}
    with pytest.raises(MissingRegion) as exc:
        stack_features(feats)
    assert exc.value.region is Region.NOSE
    feats[Region.NOSE] = np.zeros(5)
    with pytest.raises(DimensionMismatch):
        stack_features(feats)


def test_stack_copy_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        vecs = {r: rng.normal(size=8) for r in REGIONS}
        s = stack_features(vecs, "x", ("D", "v", 1))
        for i, r in enumerate(s.region_ids):
            assert np.array_equal(s.rows[i], vecs[r])


def full_stack(seed=0, dim=6):
    return stack_features({r: v for r, v in zip(REGIONS, np.random.default_rng(seed).normal(size=(6, dim)))},
                          "test-stat", ("D", "v", 0))


def test_subset_examples():
    s = full_stack()
    face = subset_stack(s, [Region.FACE])
    assert face.rows.shape == (1, 6) and np.array_equal(face.rows[0], s.rows[1])
    assert subset_stack(s, REGIONS) == s
    level3 = (Region.NOSE, Region.LIPS, Region.LEFT_EYE, Region.RIGHT_EYE)
    sub = subset_stack(s, level3)
    assert sub.region_ids == (Region.LEFT_EYE, Region.RIGHT_EYE, Region.LIPS, Region.NOSE)
    np.testing.assert_array_equal(sub.rows, s.rows[[2, 3, 4, 5]])
    with pytest.raises(EmptySubset):
        subset_stack(s, [])
    with pytest.raises(UnknownRegion):
        subset_stack(face, [Region.LIPS])


def test_feature_stack_invariants():
    with pytest.raises(ValueError):
        FeatureStack(np.full((6, 6), np.inf), REGIONS, "x")
    with pytest.raises(ValueError):
        FeatureStack(np.zeros((2, 6)), (Region.FACE, Region.FRAME), "x")


# -- cache -------------------------------------------------------------------

def random_stack(rng, i):
    k = int(rng.integers(1, 7))
    regions = tuple(sorted(rng.choice(6, k, replace=False)))
    rows = rng.normal(0, 10, size=(k, int(rng.integers(1, 40)))).astype(np.float32)
    return FeatureStack(rows, tuple(REGIONS[j] for j in regions), "enc", (f"ds{i % 3}", f"v{i}", i))


def test_cache_round_trip_sweep(tmp_path):
    rng = np.random.default_rng(0)
    cache = FeatureCache(tmp_path)
    stacks = [random_stack(rng, i) for i in range(1000)]
    keys = [cache.put(s) for s in stacks]
    assert all(cache.get(k) == s for k, s in zip(keys, stacks))


def test_cache_layout_and_sidecar(tmp_path):
    cache = FeatureCache(tmp_path)
    s = FeatureStack(full_stack().rows.astype(np.float32), REGIONS, "test-stat", ("FF", "v1", 7))
    key = cache.put(s)
    assert key == make_key("test-stat", "FF", "v1", 7)
    payload = tmp_path / "test-stat" / "FF" / "v1" / "7.f32"
    meta = json.loads((tmp_path / "test-stat" / "FF" / "v1" / "7.json").read_text())
    assert payload.read_bytes() == s.rows.astype("<f4").tobytes()
    assert meta["k"] == 6 and meta["D"] == 6 and meta["regions"] == [r.value for r in REGIONS]
    assert isinstance(meta["crc32"], int)


def test_cache_corruption(tmp_path):
    cache = FeatureCache(tmp_path)
    s = FeatureStack(np.ones((6, 6), np.float32), REGIONS, "enc", ("D", "v", 0))
    key = cache.put(s)
    payload = tmp_path / "enc" / "D" / "v" / "0.f32"
    data = bytearray(payload.read_bytes())
    data[5] ^= 0x01
    payload.write_bytes(bytes(data))
    with pytest.raises(CacheCorrupt):
        cache.get(key)
    payload.write_bytes(b"short")
    with pytest.raises(CacheCorrupt):
        cache.get(key)
    with pytest.raises(KeyNotFound):
        cache.get(make_key("enc", "D", "v", 99))
    cache.delete(key)
    assert key not in cache
