"""Dataset-level drivers: region extraction, featurization and feature loading."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .cache import FeatureCache, make_key
from .encoders import EncoderSpec, encode, get_encoder, stack_features
from .errors import CacheCorrupt, KeyNotFound, RegionError
from .landmarks import LandmarkProvider, detect_landmarks
from .manifest import FrameRecord, Manifest, sample_frames
from .regions import REGIONS, CropConfig, crop_dir, crop_regions, has_crops, load_crops, load_image, preprocess, save_crops
from .training import FeatureSet

log = logging.getLogger(__name__)

DEFAULT_FRAME_BUDGET = 32


def sampled_records(m: Manifest, frame_budget: int = DEFAULT_FRAME_BUDGET, seed: int = 0) -> list[FrameRecord]:
    out = []
    for key in m.video_keys():
        out.extend(sample_frames(m, key, frame_budget, seed))
    return out


@dataclass
class ExtractSummary:
    extracted: int = 0
    skipped: int = 0
    dropped_videos: int = 0

    def line(self) -> str:
        return f"extracted={self.extracted} skipped={self.skipped}"


def extract(m: Manifest, provider: LandmarkProvider, crop_root, frame_budget: int = DEFAULT_FRAME_BUDGET,
            cfg: CropConfig = CropConfig()) -> ExtractSummary:
    """Crop the six regions of every sampled frame into ``crop_root`` as PNGs.

    Frames whose crops already exist are not recomputed. Unreadable images
    and frames without a face are skipped; a video left with no frames is
    dropped with a warning.
    """
    summary = ExtractSummary()
    for key in m.video_keys():
        ok = 0
        for rec in sample_frames(m, key, frame_budget):
            out_dir = crop_dir(crop_root, rec.dataset_id, rec.video_id, rec.frame_index)
            if has_crops(out_dir):
                ok += 1
                continue
            try:
                image = load_image(m.resolve_path(rec))
                lm = detect_landmarks(image, provider)
                rs = crop_regions(image, lm, cfg, (rec.dataset_id, rec.video_id, rec.frame_index))
            except RegionError as exc:
                log.warning("skip %s/%s frame %d: %s", rec.dataset_id, rec.video_id, rec.frame_index, exc)
                summary.skipped += 1
                continue
            save_crops(rs, out_dir)
            ok += 1
        summary.extracted += ok
        if ok == 0:
            summary.dropped_videos += 1
            log.warning("dropping video %s/%s: no usable frames", *key)
    return summary


@dataclass
class FeaturizeSummary:
    cached: int = 0
    fresh: int = 0
    repaired: int = 0
    skipped: int = 0

    def line(self) -> str:
        return f"cached={self.cached} fresh={self.fresh} repaired={self.repaired} skipped={self.skipped}"


def _clips(records: list[FrameRecord], length: int) -> list[list[FrameRecord]]:
    """Consecutive chunks of ``length`` frames; a short tail repeats its last frame."""
    out = []
    for start in range(0, len(records), length):
        chunk = records[start:start + length]
        chunk += [chunk[-1]] * (length - len(chunk))
        out.append(chunk)
    return out


def _encode_unit(frames: list[FrameRecord], crop_root, spec: EncoderSpec, backend) -> dict:
    crops = [load_crops(crop_dir(crop_root, r.dataset_id, r.video_id, r.frame_index)) for r in frames]
    inputs = []
    for region in REGIONS:
        arrs = [preprocess(c[region], spec.mean, spec.std) for c in crops]
        inputs.append(arrs[0] if spec.modality == "spatial" else np.stack(arrs))
    return dict(zip(REGIONS, encode(inputs, spec, backend)))


def featurize(m: Manifest, crop_root, cache: FeatureCache, encoder_id: str,
              frame_budget: int = DEFAULT_FRAME_BUDGET) -> FeaturizeSummary:
    """Encode cached crops into feature stacks; valid cache entries are reused.

    Temporal encoders get clips of ``clip_length`` consecutive sampled frames,
    keyed by the clip's first frame.
    """
    spec, backend = get_encoder(encoder_id)
    summary = FeaturizeSummary()
    for key in m.video_keys():
        usable = []
        for rec in sample_frames(m, key, frame_budget):
            if has_crops(crop_dir(crop_root, rec.dataset_id, rec.video_id, rec.frame_index)):
                usable.append(rec)
            else:
                summary.skipped += 1
        units = [[r] for r in usable] if spec.modality == "spatial" else _clips(usable, spec.clip_length)
        for unit in units:
            head = unit[0]
            ckey = make_key(spec.encoder_id, head.dataset_id, head.video_id, head.frame_index)
            repaired = False
            try:
                cache.get(ckey)
                summary.cached += 1
                continue
            except KeyNotFound:
                pass
            except CacheCorrupt as exc:
                log.warning("re-encoding corrupt cache entry: %s", exc)
                repaired = True
            feats = _encode_unit(unit, crop_root, spec, backend)
            stack = stack_features({r: v.astype(np.float32) for r, v in feats.items()}, spec.encoder_id,
                                   (head.dataset_id, head.video_id, head.frame_index))
            cache.put(stack)
            if repaired:
                summary.repaired += 1
            else:
                summary.fresh += 1
    return summary


def load_features(m: Manifest, cache: FeatureCache, encoder_id: str,
                  frame_budget: int = DEFAULT_FRAME_BUDGET) -> FeatureSet:
    """Gather every cached stack of the sampled frames into a FeatureSet."""
    stacks, records = [], []
    for rec in sampled_records(m, frame_budget):
        ckey = make_key(encoder_id, rec.dataset_id, rec.video_id, rec.frame_index)
        if ckey not in cache:
            continue
        stacks.append(cache.get(ckey))
        records.append(rec)
    if not stacks:
        raise KeyNotFound(f"no cached features for encoder {encoder_id!r}; run featurize first")
    return FeatureSet.from_stacks(stacks, records)


def feature_digest(fs: FeatureSet) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(fs.x).tobytes())
    for r in fs.records:
        h.update(f"{r.dataset_id}\0{r.video_id}\0{r.frame_index}\0{r.label}\0{r.split}\n".encode())
    return h.hexdigest()[:16]
