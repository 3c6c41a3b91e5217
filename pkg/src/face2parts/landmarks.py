"""81-point facial landmark detection behind a pluggable provider interface."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import ImageUnreadable, NoFaceDetected

N_LANDMARKS = 81
MIN_IMAGE_SIDE = 64


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    points: np.ndarray  # (81, 2) float64 pixel (x, y)
    image_size: tuple[int, int]  # (width, height)
    detector_id: str

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_LANDMARKS, 2):
            raise ValueError(f"expected {N_LANDMARKS} landmark points, got shape {pts.shape}")
        w, h = self.image_size
        pts = pts.copy()
        # keep points inside [0, w) x [0, h)
        pts[:, 0] = np.clip(pts[:, 0], 0, w - 1)
        pts[:, 1] = np.clip(pts[:, 1], 0, h - 1)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def translated(self, dx: float, dy: float, image_size=None) -> "LandmarkSet":
        size = image_size or self.image_size
        return LandmarkSet(self.points + [dx, dy], size, self.detector_id)


@dataclass(frozen=True)
class Detection:
    """One face candidate: bounding box ``(x0, y0, x1, y1)`` and its 81 points."""
    box: tuple[float, float, float, float]
    points: np.ndarray

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.box
        return max(0.0, x1 - x0) * max(0.0, y1 - y0)


class LandmarkProvider(Protocol):
    detector_id: str

    def detect(self, image: np.ndarray) -> Sequence[Detection]:
        ...


def check_image(image) -> np.ndarray:
    """Return ``image`` as an HxWx3 float32 array in [0, 1] or raise ImageUnreadable."""
    if image is None:
        raise ImageUnreadable("no image data")
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageUnreadable(f"expected an RGB array, got shape {arr.shape}")
    if min(arr.shape[:2]) < MIN_IMAGE_SIDE:
        raise ImageUnreadable(f"image smaller than {MIN_IMAGE_SIDE}px: {arr.shape[:2]}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    else:
        arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ImageUnreadable("image contains non-finite values")
    return arr


def detect_landmarks(image, detector: LandmarkProvider) -> LandmarkSet:
    """Landmarks of the largest face found by ``detector``."""
    arr = check_image(image)
    detections = list(detector.detect(arr))
    if not detections:
        raise NoFaceDetected("no face found")
    best = max(detections, key=lambda d: d.area)
    h, w = arr.shape[:2]
    return LandmarkSet(best.points, (w, h), detector.detector_id)


# -- canonical template ------------------------------------------------------

def _arc(n, cx, cy, rx, ry, start, stop):
    t = np.linspace(start, stop, n)
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _ellipse(n, cx, cy, rx, ry, phase=np.pi):
    t = phase + np.arange(n) * 2 * np.pi / n
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def canonical_template() -> np.ndarray:
    """An 81-point face layout in the unit square, 68-point ordering plus 13 forehead points.

    Index groups: jaw 0-16, brows 17-26, nose 27-35, eyes 36-41 / 42-47,
    outer lips 48-59, inner lips 60-67, forehead 68-80.
    """
    jaw = _arc(17, 0.5, 0.45, 0.42, 0.5, np.pi, 0.0)  # lower half, left to right
    brow_l = np.stack([np.linspace(0.18, 0.42, 5), [0.34, 0.31, 0.30, 0.31, 0.33]], axis=1)
    brow_r = np.stack([1.0 - brow_l[::-1, 0], brow_l[::-1, 1]], axis=1)
    bridge = np.stack([np.full(4, 0.5), np.linspace(0.40, 0.58, 4)], axis=1)
    nostrils = np.stack([np.linspace(0.42, 0.58, 5), [0.64, 0.655, 0.66, 0.655, 0.64]], axis=1)
    eye_l = _ellipse(6, 0.32, 0.42, 0.07, 0.025)
    eye_r = _ellipse(6, 0.68, 0.42, 0.07, 0.025)
    lips_outer = _ellipse(12, 0.5, 0.78, 0.16, 0.06)
    lips_inner = _ellipse(8, 0.5, 0.78, 0.11, 0.025)
    forehead = _arc(13, 0.5, 0.30, 0.40, 0.27, np.pi, 2 * np.pi)
    pts = np.concatenate([jaw, brow_l, brow_r, bridge, nostrils, eye_l, eye_r,
                          lips_outer, lips_inner, forehead])
    assert pts.shape == (N_LANDMARKS, 2)
    return np.clip(pts, 0.0, 1.0)


class TemplateLandmarkProvider:
    """Deterministic provider for tests and synthetic data.

    Every connected blob of pixels brighter than ``threshold`` counts as a
    face; the canonical template is scaled into the blob's bounding box.
    A blank image therefore has no face.
    """

    detector_id = "template-81"

    def __init__(self, threshold: float = 0.05, min_area: int = 16, template: np.ndarray | None = None):
        self.threshold = threshold
        self.min_area = min_area
        self.template = canonical_template() if template is None else np.asarray(template, float)

    def detect(self, image: np.ndarray) -> list[Detection]:
        from scipy import ndimage

        mask = np.asarray(image).max(axis=2) > self.threshold
        labels, n = ndimage.label(mask)
        out = []
        for sl in ndimage.find_objects(labels):
            if sl is None:
                continue
            y0, y1 = sl[0].start, sl[0].stop
            x0, x1 = sl[1].start, sl[1].stop
            if (x1 - x0) * (y1 - y0) < self.min_area:
                continue
            pts = self.template * [x1 - 1 - x0, y1 - 1 - y0] + [x0, y0]
            out.append(Detection((float(x0), float(y0), float(x1), float(y1)), pts))
        return out


class DlibLandmarkProvider:
    """Adapter for dlib's frontal face detector plus an 81-point shape model.

    ``predictor_path`` points at a ``shape_predictor_81_face_landmarks.dat``
    style model file. dlib is imported lazily and is not a hard dependency.
    """

    detector_id = "dlib-81"

    def __init__(self, predictor_path, upsample: int = 1):
        try:
            import dlib
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise ImportError("DlibLandmarkProvider requires the 'dlib' package") from exc
        self._detector = dlib.get_frontal_face_detector()
        self._predictor = dlib.shape_predictor(str(predictor_path))
        self.upsample = upsample

    def detect(self, image: np.ndarray) -> list[Detection]:  # pragma: no cover - needs dlib
        u8 = np.ascontiguousarray(np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8))
        out = []
        for rect in self._detector(u8, self.upsample):
            shape = self._predictor(u8, rect)
            pts = np.array([[shape.part(i).x, shape.part(i).y] for i in range(shape.num_parts)], float)
            if len(pts) != N_LANDMARKS:
                raise ValueError(f"shape model yields {len(pts)} points, expected {N_LANDMARKS}")
            out.append(Detection((rect.left(), rect.top(), rect.right(), rect.bottom()), pts))
        return out


def make_provider(name: str) -> LandmarkProvider:
    """Build a provider from a config string: ``template`` or ``dlib:<model path>``."""
    if name == "template":
        return TemplateLandmarkProvider()
    if name.startswith("dlib:"):
        return DlibLandmarkProvider(name.split(":", 1)[1])
    raise ValueError(f"unknown landmark provider {name!r}")
