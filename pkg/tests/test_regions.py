import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from face2parts.encoders import CLIP_MEAN, CLIP_STD
from face2parts.errors import DegenerateRegion, ImageUnreadable, NoFaceDetected, NonFiniteInput
from face2parts.landmarks import (N_LANDMARKS, LandmarkSet, TemplateLandmarkProvider, canonical_template,
                                  detect_landmarks, make_provider)
from face2parts.regions import (REGIONS, CropConfig, Region, crop_regions, has_crops, load_crops,
                                parse_regions, preprocess, regions_for_levels, save_crops, source_boxes)
from face2parts.synthetic import face_image

GROUPS = {  # written out independently of the package tables
    Region.FACE: range(0, 81),
    Region.LEFT_EYE: range(36, 42),
    Region.RIGHT_EYE: range(42, 48),
    Region.NOSE: range(27, 36),
    Region.LIPS: range(48, 68),
}


def oracle_box(points, region, width, height, clamp=True):
    """min/max of the group, padded by a fraction of the longer side, floored to pixels, clamped."""
    if region is Region.FRAME:
        return (0, 0, width, height)
    xs = [points[i][0] for i in GROUPS[region]]
    ys = [points[i][1] for i in GROUPS[region]]
    frac = 0.10 if region is Region.FACE else 0.25
    pad = frac * max(max(xs) - min(xs), max(ys) - min(ys))
    x0 = math.floor(min(xs) - pad)
    y0 = math.floor(min(ys) - pad)
    x1 = math.floor(max(xs) + pad) + 1
    y1 = math.floor(max(ys) + pad) + 1
    if clamp:
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, width), min(y1, height)
    return (x0, y0, x1, y1)


def landmarks_in(box, size, jitter=0.0, seed=0):
    x0, y0, x1, y1 = box
    pts = canonical_template() * [x1 - x0, y1 - y0] + [x0, y0]
    if jitter:
        pts = pts + np.random.default_rng(seed).normal(0, jitter, pts.shape)
    return LandmarkSet(pts, size, "test")


# -- landmarks ---------------------------------------------------------------

def test_blank_image_has_no_face():
    with pytest.raises(NoFaceDetected):
        detect_landmarks(np.zeros((128, 128, 3), np.float32), TemplateLandmarkProvider())


@pytest.mark.parametrize("shape", [(32, 128, 3), (128, 128), (128, 128, 4)])
def test_unreadable_images(shape):
    with pytest.raises(ImageUnreadable):
        detect_landmarks(np.zeros(shape, np.float32), TemplateLandmarkProvider())


def test_template_points_verbatim():
    img = face_image(256, 256, ((40, 50, 200, 230),))
    lm = detect_landmarks(img, TemplateLandmarkProvider())
    want = canonical_template() * [199 - 40, 229 - 50] + [40, 50]
    assert lm.points.shape == (N_LANDMARKS, 2)
    np.testing.assert_array_equal(lm.points, want)
    assert lm.image_size == (256, 256)
    assert lm.detector_id == "template-81"


def test_largest_face_wins():
    # 30x30 = 900 px^2 and 50x50 = 2500 px^2
    img = face_image(256, 256, ((10, 10, 40, 40), (150, 120, 200, 170)))
    lm = detect_landmarks(img, TemplateLandmarkProvider())
    detections = TemplateLandmarkProvider().detect(img)
    areas = sorted(d.area for d in detections)
    assert areas == [900.0, 2500.0]
    assert lm.points[:, 0].min() >= 150 and lm.points[:, 1].min() >= 120


def test_make_provider():
    assert isinstance(make_provider("template"), TemplateLandmarkProvider)
    with pytest.raises(ValueError):
        make_provider("nope")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-500, 500), st.floats(-500, 500)), min_size=81, max_size=81),
       st.integers(1, 300), st.integers(1, 300))
def test_landmarks_clamped(points, w, h):
    lm = LandmarkSet(np.array(points), (w, h), "x")
    assert np.all(lm.points[:, 0] >= 0) and np.all(lm.points[:, 0] < w)
    assert np.all(lm.points[:, 1] >= 0) and np.all(lm.points[:, 1] < h)


# -- crops -------------------------------------------------------------------

def test_regions_and_levels():
    assert [r.level for r in REGIONS] == [1, 2, 3, 3, 3, 3]
    assert regions_for_levels([3]) == (Region.LEFT_EYE, Region.RIGHT_EYE, Region.LIPS, Region.NOSE)
    assert parse_regions("1,2") == (Region.FRAME, Region.FACE)
    assert parse_regions("nose,face") == (Region.FACE, Region.NOSE)
    assert parse_regions("all") == REGIONS


def test_frame_crop_identity():
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(224, 224, 3)).astype(np.float32)
    lm = landmarks_in((40, 40, 180, 190), (224, 224))
    rs = crop_regions(img, lm)
    assert np.array_equal(rs[Region.FRAME], img)
    assert rs[Region.FRAME].dtype == np.float32


def test_left_eye_box_contains_centroid():
    lm0 = landmarks_in((0, 0, 200, 200), (400, 400))
    centroid = lm0.points[36:42].mean(axis=0)
    lm = lm0.translated(80 - centroid[0], 100 - centroid[1])
    assert np.allclose(lm.points[36:42].mean(axis=0), (80, 100))
    x0, y0, x1, y1 = source_boxes(lm)[Region.LEFT_EYE]
    assert x0 <= 80 < x1 and y0 <= 100 < y1


@pytest.mark.parametrize("seed", range(10))
def test_boxes_match_oracle(seed):
    rng = np.random.default_rng(seed)
    w, h = int(rng.integers(64, 400)), int(rng.integers(64, 400))
    # landmarks inside the image; padding still pushes boxes past the edges
    x0, y0 = rng.uniform(3, w / 2), rng.uniform(3, h / 2)
    box = (x0, y0, rng.uniform(x0 + 20, w - 4), rng.uniform(y0 + 20, h - 4))
    lm = landmarks_in(box, (w, h), jitter=1.0, seed=seed)
    got = source_boxes(lm)
    pts = lm.points.tolist()
    for region in REGIONS:
        assert got[region] == oracle_box(pts, region, w, h), region


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(-40, 40), st.integers(-40, 40))
def test_translation_equivariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    box = (100 + rng.uniform(0, 50), 100 + rng.uniform(0, 50), 200 + rng.uniform(0, 80), 220 + rng.uniform(0, 80))
    lm = landmarks_in(box, (400, 400), jitter=1.5, seed=seed)
    moved = lm.translated(dx, dy)
    a = source_boxes(lm, clamp=False)
    b = source_boxes(moved, clamp=False)
    for region in REGIONS[1:]:
        assert b[region] == (a[region][0] + dx, a[region][1] + dy, a[region][2] + dx, a[region][3] + dy)


@settings(max_examples=25, deadline=None)
@given(st.integers(64, 300), st.integers(64, 300), st.integers(0, 10 ** 6))
def test_crop_contract(w, h, seed):
    rng = np.random.default_rng(seed)
    img = rng.uniform(size=(h, w, 3)).astype(np.float32)
    box = (rng.uniform(-20, w / 2), rng.uniform(-20, h / 2), rng.uniform(w / 2 + 5, w + 20),
           rng.uniform(h / 2 + 5, h + 20))
    rs = crop_regions(img, landmarks_in(box, (w, h), jitter=3.0, seed=seed), source=("D", "v", 0))
    assert set(rs.crops) == set(REGIONS)
    for region, crop in rs.crops.items():
        assert crop.shape == (224, 224, 3)
        assert np.all(np.isfinite(crop)) and crop.min() >= 0 and crop.max() <= 1
        x0, y0, x1, y1 = rs.boxes[region]
        assert 0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h


def test_degenerate_region_fallback():
    pts = canonical_template() * 150 + 40
    pts[36:42] = pts[36]  # collapse the left eye to a point
    lm = LandmarkSet(pts, (256, 256), "test")
    boxes = source_boxes(lm)
    fx0, fy0, fx1, fy1 = boxes[Region.FACE]
    x0, y0, x1, y1 = boxes[Region.LEFT_EYE]
    assert fx0 <= x0 < x1 <= fx0 + math.ceil((fx1 - fx0) / 3) + 1
    assert fy0 <= y0 < y1 <= fy0 + math.ceil((fy1 - fy0) / 3) + 1
    with pytest.raises(DegenerateRegion):
        source_boxes(lm, CropConfig(fallback=False))


def test_crop_png_round_trip(tmp_path):
    img = face_image(256, 256)
    rs = crop_regions(img, detect_landmarks(img, TemplateLandmarkProvider()))
    save_crops(rs, tmp_path / "c")
    assert has_crops(tmp_path / "c")
    back = load_crops(tmp_path / "c")
    for region in REGIONS:
        assert np.abs(back[region] - rs[region]).max() <= 0.5 / 255 + 1e-6


# -- preprocess --------------------------------------------------------------

def test_preprocess_examples():
    zero = np.zeros((224, 224, 3), np.float32)
    assert np.array_equal(preprocess(zero, (0, 0, 0), (1, 1, 1)), zero)
    half = np.full((224, 224, 3), 0.5, np.float32)
    assert np.array_equal(preprocess(half, (0.5,) * 3, (0.25,) * 3), zero)


def test_preprocess_clip_constants():
    crop = np.random.default_rng(0).uniform(size=(224, 224, 3)).astype(np.float32)
    got = preprocess(crop, CLIP_MEAN, CLIP_STD)
    for c in range(3):
        want = (crop[..., c] - np.float32(CLIP_MEAN[c])) / np.float32(CLIP_STD[c])
        np.testing.assert_allclose(got[..., c], want, rtol=1e-6, atol=1e-6)


def test_preprocess_non_finite():
    crop = np.zeros((224, 224, 3), np.float32)
    crop[3, 4, 1] = np.nan
    with pytest.raises(NonFiniteInput):
        preprocess(crop, (0, 0, 0), (1, 1, 1))
    with pytest.raises(NonFiniteInput):
        preprocess(np.zeros((224, 224, 3), np.float32), (0, 0, 0), (0, 1, 1))
