"""Six-region extraction: frame, face, both eyes, lips and nose, each resized to 224x224."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import DegenerateRegion, NonFiniteInput
from .landmarks import LandmarkSet, check_image

log = logging.getLogger(__name__)

CROP_SIZE = 224


class Region(enum.Enum):
    FRAME = "frame"
    FACE = "face"
    LEFT_EYE = "left_eye"
    RIGHT_EYE = "right_eye"
    LIPS = "lips"
    NOSE = "nose"

    @property
    def level(self) -> int:
        return _LEVELS[self]

    @classmethod
    def parse(cls, name) -> "Region":
        if isinstance(name, Region):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"lefteye": "left_eye", "righteye": "right_eye", "le": "left_eye",
                   "re": "right_eye", "mouth": "lips"}
        key = aliases.get(key.replace("_", ""), key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown region {name!r}") from None

    def __str__(self):
        return self.value


_LEVELS = {Region.FRAME: 1, Region.FACE: 2, Region.LEFT_EYE: 3,
           Region.RIGHT_EYE: 3, Region.LIPS: 3, Region.NOSE: 3}

# canonical coarse-to-fine row order
REGIONS: tuple[Region, ...] = tuple(Region)
LEVELS: dict[int, tuple[Region, ...]] = {
    lvl: tuple(r for r in REGIONS if r.level == lvl) for lvl in (1, 2, 3)
}


def canonical(regions) -> tuple[Region, ...]:
    """Deduplicate and sort regions into canonical order."""
    chosen = {Region.parse(r) for r in regions}
    return tuple(r for r in REGIONS if r in chosen)


def regions_for_levels(levels) -> tuple[Region, ...]:
    return canonical(r for lvl in levels for r in LEVELS[int(lvl)])


def parse_regions(spec: str) -> tuple[Region, ...]:
    """Parse ``"face,lips"`` or level lists such as ``"1,3"`` / ``"all"``."""
    spec = spec.strip().lower()
    if spec in ("all", "hfr", "1,2,3"):
        return REGIONS
    items = [s for s in (p.strip() for p in spec.split(",")) if s]
    if items and all(s.isdigit() for s in items):
        return regions_for_levels(items)
    return canonical(items)


# landmark index groups in the 81-point layout
LANDMARK_GROUPS: dict[Region, tuple[int, ...]] = {
    Region.FACE: tuple(range(0, 81)),
    Region.LEFT_EYE: tuple(range(36, 42)),
    Region.RIGHT_EYE: tuple(range(42, 48)),
    Region.NOSE: tuple(range(27, 36)),
    Region.LIPS: tuple(range(48, 68)),
}

# fallback windows as (x0, y0, x1, y1) fractions of the face box
FALLBACK_WINDOWS: dict[Region, tuple[float, float, float, float]] = {
    Region.LEFT_EYE: (0.0, 0.0, 1 / 3, 1 / 3),
    Region.RIGHT_EYE: (2 / 3, 0.0, 1.0, 1 / 3),
    Region.NOSE: (1 / 3, 1 / 3, 2 / 3, 2 / 3),
    Region.LIPS: (1 / 3, 2 / 3, 2 / 3, 1.0),
}


@dataclass(frozen=True)
class CropConfig:
    part_padding: float = 0.25
    face_padding: float = 0.10
    size: int = CROP_SIZE
    fallback: bool = True


Box = tuple[float, float, float, float]


def raw_box(points: np.ndarray, region: Region) -> Box:
    pts = np.asarray(points)[list(LANDMARK_GROUPS[region])]
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return float(x0), float(y0), float(x1), float(y1)


def pad_box(box: Box, fraction: float) -> Box:
    x0, y0, x1, y1 = box
    pad = fraction * max(x1 - x0, y1 - y0)
    return x0 - pad, y0 - pad, x1 + pad, y1 + pad


def to_pixels(box: Box) -> tuple[int, int, int, int]:
    """Integer half-open pixel box covering ``box`` (the max corner is inclusive)."""
    x0, y0, x1, y1 = box
    return math.floor(x0), math.floor(y0), math.floor(x1) + 1, math.floor(y1) + 1


def clamp_box(box: tuple[int, int, int, int], width: int, height: int) -> tuple[int, int, int, int]:
    x0, y0, x1, y1 = box
    x0, x1 = min(max(x0, 0), width - 1), min(max(x1, 1), width)
    y0, y1 = min(max(y0, 0), height - 1), min(max(y1, 1), height)
    return x0, y0, max(x1, x0 + 1), max(y1, y0 + 1)


def source_boxes(lm: LandmarkSet, cfg: CropConfig = CropConfig(), *, clamp: bool = True) -> dict[Region, tuple[int, int, int, int]]:
    """Pixel source box of every region; ``clamp=False`` gives the pre-clamp boxes."""
    w, h = lm.image_size
    boxes: dict[Region, tuple[int, int, int, int]] = {Region.FRAME: (0, 0, w, h)}

    face_raw = raw_box(lm.points, Region.FACE)
    if face_raw[2] <= face_raw[0] or face_raw[3] <= face_raw[1]:
        raise DegenerateRegion(Region.FACE)
    face = to_pixels(pad_box(face_raw, cfg.face_padding))
    boxes[Region.FACE] = face
    face_c = clamp_box(face, w, h)

    for region in (Region.LEFT_EYE, Region.RIGHT_EYE, Region.LIPS, Region.NOSE):
        rb = raw_box(lm.points, region)
        if rb[2] > rb[0] and rb[3] > rb[1]:
            boxes[region] = to_pixels(pad_box(rb, cfg.part_padding))
            continue
        if not cfg.fallback:
            raise DegenerateRegion(region)
        log.warning("degenerate %s box, using face sub-window", region)
        fx0, fy0, fx1, fy1 = face_c
        a, b, c, d = FALLBACK_WINDOWS[region]
        fw, fh = fx1 - fx0, fy1 - fy0
        boxes[region] = (fx0 + math.floor(a * fw), fy0 + math.floor(b * fh),
                         fx0 + max(math.ceil(c * fw), math.floor(a * fw) + 1),
                         fy0 + max(math.ceil(d * fh), math.floor(b * fh) + 1))

    if clamp:
        boxes = {r: clamp_box(b, w, h) for r, b in boxes.items()}
    return {r: boxes[r] for r in REGIONS}


def resize(img: np.ndarray, size: int = CROP_SIZE) -> np.ndarray:
    """Bilinear resize without antialiasing; a no-op when already ``size`` square."""
    if img.shape[0] == size and img.shape[1] == size:
        return np.array(img, dtype=np.float32, copy=True)
    out = cv2.resize(np.ascontiguousarray(img, dtype=np.float32), (size, size),
                     interpolation=cv2.INTER_LINEAR)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class RegionSet:
    crops: dict[Region, np.ndarray]
    source: tuple = ()
    landmark_provenance: str = ""
    boxes: dict[Region, tuple[int, int, int, int]] = field(default_factory=dict)

    def __getitem__(self, region) -> np.ndarray:
        return self.crops[Region.parse(region)]


def crop_regions(image, lm: LandmarkSet, cfg: CropConfig = CropConfig(), source: tuple = ()) -> RegionSet:
    """Cut the six region crops out of ``image`` and resize each to ``cfg.size``."""
    img = check_image(image)
    h, w = img.shape[:2]
    if (w, h) != tuple(lm.image_size):
        raise ValueError(f"landmarks are for a {lm.image_size} image, got {(w, h)}")
    boxes = source_boxes(lm, cfg)
    crops = {}
    for region, (x0, y0, x1, y1) in boxes.items():
        crops[region] = resize(img[y0:y1, x0:x1], cfg.size)
    return RegionSet(crops, tuple(source), lm.detector_id, boxes)


def preprocess(crop: np.ndarray, mean, std) -> np.ndarray:
    """Per-channel ``(x - mean) / std`` normalization."""
    arr = np.asarray(crop, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("crop contains non-finite values")
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (arr - mean) / std
    if not np.all(np.isfinite(out)):
        raise NonFiniteInput("normalization produced non-finite values")
    return out


# -- crop dump / crop cache --------------------------------------------------

def crop_dir(root, dataset_id: str, video_id: str, frame_index: int) -> Path:
    return Path(root) / dataset_id / video_id / str(frame_index)


def save_crops(rs: RegionSet, directory) -> None:
    """Write each crop as ``<directory>/<region>.png`` (8-bit RGB)."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for region, crop in rs.crops.items():
        u8 = np.clip(np.rint(crop * 255.0), 0, 255).astype(np.uint8)
        tmp = directory / f".{region.value}.png.tmp"
        Image.fromarray(u8, mode="RGB").save(tmp, format="PNG")
        tmp.replace(directory / f"{region.value}.png")


def has_crops(directory, regions=REGIONS) -> bool:
    directory = Path(directory)
    return all((directory / f"{Region.parse(r).value}.png").is_file() for r in regions)


def load_crops(directory, regions=REGIONS) -> dict[Region, np.ndarray]:
    directory = Path(directory)
    return {Region.parse(r): load_image(directory / f"{Region.parse(r).value}.png") for r in regions}


def load_image(path) -> np.ndarray:
    """Read an image file as HxWx3 float32 RGB in [0, 1]."""
    from PIL import Image, UnidentifiedImageError

    from .errors import ImageUnreadable

    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageUnreadable(f"{path}: {exc}") from None
    return arr
