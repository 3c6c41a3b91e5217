import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from face2parts.errors import EmptyVideo, SingleClassEval
from face2parts.metrics import frame_auc, roc_curve, video_auc, video_scores


def pairwise(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    return sum((p > n) + 0.5 * (p == n) for p in pos for n in neg) / (len(pos) * len(neg))


def test_auc_examples():
    assert frame_auc([0.9, 0.1], [1, 0]) == 1.0
    assert frame_auc([0.1, 0.9], [1, 0]) == 0.0
    assert frame_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auc_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        scores = rng.uniform(size=200)
        labels = rng.integers(0, 2, 200)
        assert abs(frame_auc(scores, labels) - pairwise(scores, labels)) <= 1e-12


def test_auc_single_class():
    with pytest.raises(SingleClassEval):
        frame_auc([0.1, 0.2], [1, 1])


labelled = st.lists(st.tuples(st.floats(-5, 5), st.integers(0, 1)), min_size=2, max_size=60).filter(
    lambda xs: len({y for _, y in xs}) == 2)


@settings(max_examples=100, deadline=None)
@given(labelled)
def test_auc_monotone_invariance(pairs):
    scores = np.array([s for s, _ in pairs])
    labels = np.array([y for _, y in pairs])
    base = frame_auc(scores, labels)
    for transformed in (1.0 / (1.0 + np.exp(-scores)), scores ** 3 + 7.0, 3.0 * scores - 1.0, np.arctan(scores)):
        # float rounding can merge nearly equal scores; only tie-preserving images are comparable
        if len(np.unique(transformed)) == len(np.unique(scores)):
            assert frame_auc(transformed, labels) == base
    assert 0.0 <= base <= 1.0


def test_video_scores_examples():
    got = video_scores({"a": [0.2, 0.4, 0.6], "b": [0.7]})
    assert list(got) == ["a", "b"]
    assert got["a"] == pytest.approx(0.4, abs=1e-15)
    assert got["b"] == 0.7
    with pytest.raises(EmptyVideo):
        video_scores({"a": []})


def test_video_scores_scalar_oracle():
    rng = np.random.default_rng(1)
    groups = [(f"v{i}", rng.uniform(size=int(rng.integers(1, 50))).tolist()) for i in range(100)]
    got = video_scores(groups)
    for key, frames in groups:
        acc = 0.0
        for f in frames:
            acc += f
        assert abs(got[key] - acc / len(frames)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(labelled)
def test_one_frame_per_video_degenerates(pairs):
    scores = [s for s, _ in pairs]
    labels = [y for _, y in pairs]
    keys = [("D", str(i)) for i in range(len(pairs))]
    assert video_auc(keys, scores, labels) == frame_auc(scores, labels)


def test_video_auc_mixed_labels():
    with pytest.raises(ValueError):
        video_auc([("D", "a"), ("D", "a"), ("D", "b")], [0.1, 0.2, 0.3], [0, 1, 1])


def test_roc_curve_area_matches_auc():
    rng = np.random.default_rng(2)
    scores = np.round(rng.normal(size=300), 1)
    labels = rng.integers(0, 2, 300)
    fpr, tpr = roc_curve(scores, labels)
    assert fpr[0] == tpr[0] == 0.0 and fpr[-1] == tpr[-1] == 1.0
    area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    assert area == pytest.approx(frame_auc(scores, labels), abs=1e-12)
