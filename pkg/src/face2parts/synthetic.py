"""Synthetic datasets with region-localized manipulation signals.

Feature-level data mimics test-stat stacks (per-channel means then standard
deviations for every region). Fake videos carry a fixed-norm offset on
chosen region rows only, so detectors that ignore those rows see nothing.
Image-level fixtures draw bright "faces" on a black canvas for the
template landmark provider.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .manifest import FrameRecord, Manifest
from .regions import REGIONS, Region
from .training import FeatureSet


def make_region_offset_dataset(
    n_videos: int = 200,
    frames_per_video: int = 8,
    *,
    dim: int = 6,
    offset_norm: float = 0.5,
    frame_noise: float = 0.05,
    video_spread: float = 0.05,
    manipulations: dict[str, Region] | None = None,
    test_fraction: float = 0.5,
    dataset_id: str = "SYN",
    seed: int = 0,
) -> FeatureSet:
    """Balanced real/fake videos; fakes add ``offset_norm`` along a fixed direction to one row.

    Every video has a base stack (means ~U(0.3, 0.7), stds ~U(0.1, 0.3))
    jittered by ``video_spread``, and each frame adds N(0, ``frame_noise``)
    to every entry. ``manipulations`` maps manipulation ids to the region row
    they perturb; fake videos cycle through them. Half of each class (by
    ``test_fraction``) goes to the test split.
    """
    manipulations = manipulations or {"LS": Region.LIPS}
    rng = np.random.default_rng(seed)
    k = len(REGIONS)
    base = np.concatenate([rng.uniform(0.3, 0.7, (k, dim // 2)),
                           rng.uniform(0.1, 0.3, (k, dim - dim // 2))], axis=1)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    manip_ids = list(manipulations)

    xs, records = [], []
    n_fake_seen = 0
    per_class_test = {0: 0, 1: 0}
    n_per_class = {0: (n_videos + 1) // 2, 1: n_videos // 2}
    for v in range(n_videos):
        label = v % 2
        manip = None
        video_base = base + rng.normal(0.0, video_spread, base.shape)
        if label == 1:
            manip = manip_ids[n_fake_seen % len(manip_ids)]
            n_fake_seen += 1
            row = REGIONS.index(manipulations[manip])
            video_base[row] += offset_norm * direction
        n_test = int(round(test_fraction * n_per_class[label]))
        split = "test" if per_class_test[label] < n_test else "train"
        per_class_test[label] += split == "test"
        vid = f"v{v:04d}"
        for f in range(frames_per_video):
            xs.append(video_base + rng.normal(0.0, frame_noise, base.shape))
            records.append(FrameRecord(dataset_id, vid, f, f"{dataset_id}/{vid}/{f:04d}.png",
                                       label, split, manip))
    return FeatureSet(np.asarray(xs, dtype=np.float32), tuple(records), REGIONS, "test-stat")


def merge(*sets: FeatureSet) -> FeatureSet:
    return FeatureSet(np.concatenate([s.x for s in sets]), tuple(r for s in sets for r in s.records),
                      sets[0].region_ids, sets[0].encoder_id)


# -- image fixtures ----------------------------------------------------------

def face_image(width: int = 256, height: int = 256, faces=((48, 48, 208, 208),),
               seed: int = 0) -> np.ndarray:
    """Black canvas with textured bright rectangles standing in for faces."""
    rng = np.random.default_rng(seed)
    img = np.zeros((height, width, 3), dtype=np.float32)
    for x0, y0, x1, y1 in faces:
        patch = rng.uniform(0.4, 1.0, (y1 - y0, x1 - x0, 3)).astype(np.float32)
        img[y0:y1, x0:x1] = patch
    return img


def write_image_fixture(root, n_videos: int = 2, frames_per_video: int = 5, blank=(),
                        dataset_id: str = "FIX", size: int = 256, seed: int = 0,
                        fake_tint: float = 0.0) -> Path:
    """Write PNG frames plus ``manifest.jsonl`` under ``root``; returns the manifest path.

    Videos alternate real/fake and both classes appear in each split when
    ``n_videos >= 4``; with fewer videos everything is training data.
    ``blank`` lists ``(video_number, frame_index)`` pairs rendered all black.
    ``fake_tint`` is added to the red channel around the lips of fake frames.
    """
    from PIL import Image

    root = Path(root)
    rng = np.random.default_rng(seed)
    lines = []
    for v in range(n_videos):
        vid = f"vid{v:03d}"
        label = v % 2
        split = "test" if n_videos >= 4 and v >= n_videos - 2 else "train"
        for f in range(frames_per_video):
            rel = Path("frames") / vid / f"{f:04d}.png"
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            if (v, f) in set(blank):
                img = np.zeros((size, size, 3), dtype=np.float32)
            else:
                m = int(rng.integers(16, 48))
                img = face_image(size, size, ((m, m, size - m, size - m),), seed=seed + v * 1000 + f)
                if label and fake_tint:
                    side = size - 2 * m
                    y0, y1 = m + int(0.70 * side), m + int(0.86 * side)
                    x0, x1 = m + int(0.32 * side), m + int(0.68 * side)
                    img[y0:y1, x0:x1, 0] = np.clip(img[y0:y1, x0:x1, 0] + fake_tint, 0.0, 1.0)
            Image.fromarray((img * 255).round().astype(np.uint8), mode="RGB").save(path)
            lines.append(json.dumps({
                "dataset_id": dataset_id, "video_id": vid, "frame_index": f,
                "image_path": rel.as_posix(), "label": label, "split": split,
                "manipulation_id": "DF" if label else None,
            }))
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def to_manifest(features: FeatureSet) -> Manifest:
    return Manifest(features.records)
