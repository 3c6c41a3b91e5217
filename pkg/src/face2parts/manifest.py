"""Frame manifests: loading, validation, per-video access and frame sampling.

A manifest is a JSON-lines file with one frame per line::

    {"dataset_id": "FF++", "video_id": "000_003", "frame_index": 12,
     "image_path": "frames/000_003/012.png", "label": 1, "split": "train",
     "manipulation_id": "DF"}

``label`` is 0 for real and 1 for fake; ``split`` is ``train`` or ``test``.
Relative image paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import MalformedRecord, MissingClass, SplitLeak, UnknownVideo

log = logging.getLogger(__name__)

SPLITS = ("train", "test")
LABELS = (0, 1)
REAL, FAKE = 0, 1

_FIELDS = ("dataset_id", "video_id", "frame_index", "image_path", "label", "split", "manipulation_id")


@dataclass(frozen=True)
class FrameRecord:
    dataset_id: str
    video_id: str
    frame_index: int
    image_path: str
    label: int
    split: str
    manipulation_id: str | None = None

    @property
    def video_key(self) -> tuple[str, str]:
        return (self.dataset_id, self.video_id)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in _FIELDS}


def parse_record(obj, line_no: int = 0) -> FrameRecord:
    if not isinstance(obj, dict):
        raise MalformedRecord(line_no, "record is not a JSON object")
    missing = [f for f in _FIELDS[:-1] if f not in obj]
    if missing:
        raise MalformedRecord(line_no, f"missing field(s) {', '.join(missing)}")
    unknown = set(obj) - set(_FIELDS)
    if unknown:
        raise MalformedRecord(line_no, f"unknown field(s) {', '.join(sorted(unknown))}")

    for name in ("dataset_id", "video_id", "image_path"):
        if not isinstance(obj[name], str) or not obj[name]:
            raise MalformedRecord(line_no, f"{name} must be a non-empty string")
    idx = obj["frame_index"]
    if isinstance(idx, bool) or not isinstance(idx, int) or idx < 0:
        raise MalformedRecord(line_no, "frame_index must be a non-negative integer")
    label = obj["label"]
    if isinstance(label, bool) or label not in LABELS:
        raise MalformedRecord(line_no, "label must be 0 or 1")
    if obj["split"] not in SPLITS:
        raise MalformedRecord(line_no, "split must be 'train' or 'test'")
    manip = obj.get("manipulation_id")
    if manip is not None and not isinstance(manip, str):
        raise MalformedRecord(line_no, "manipulation_id must be a string or null")

    return FrameRecord(
        dataset_id=obj["dataset_id"],
        video_id=obj["video_id"],
        frame_index=idx,
        image_path=obj["image_path"],
        label=label,
        split=obj["split"],
        manipulation_id=manip,
    )


@dataclass(frozen=True, eq=False)
class Manifest:
    """Immutable, validated collection of frame records.

    Videos are identified by ``(dataset_id, video_id)``. Per-split label
    tallies are always derived from ``records``.
    """

    records: tuple[FrameRecord, ...]
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __eq__(self, other):
        if not isinstance(other, Manifest):
            return NotImplemented
        return self.records == other.records

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @cached_property
    def datasets(self) -> frozenset[str]:
        return frozenset(r.dataset_id for r in self.records)

    @cached_property
    def counts(self) -> dict[str, tuple[int, int]]:
        """``{split: (n_real, n_fake)}`` for every split present."""
        tally = Counter((r.split, r.label) for r in self.records)
        splits = [s for s in SPLITS if tally[(s, REAL)] or tally[(s, FAKE)]]
        return {s: (tally[(s, REAL)], tally[(s, FAKE)]) for s in splits}

    @cached_property
    def _videos(self) -> "OrderedDict[tuple[str, str], list[FrameRecord]]":
        groups: OrderedDict[tuple[str, str], list[FrameRecord]] = OrderedDict()
        for r in self.records:
            groups.setdefault(r.video_key, []).append(r)
        for frames in groups.values():
            frames.sort(key=lambda r: r.frame_index)
        return groups

    def video_keys(self, split: str | None = None) -> list[tuple[str, str]]:
        """Video keys in first-appearance order, optionally filtered by split."""
        keys = list(self._videos)
        if split is not None:
            keys = [k for k in keys if self._videos[k][0].split == split]
        return keys

    def resolve_key(self, video_id, dataset_id: str | None = None) -> tuple[str, str]:
        if isinstance(video_id, tuple):
            dataset_id, video_id = video_id
        if dataset_id is not None:
            key = (dataset_id, video_id)
            if key not in self._videos:
                raise UnknownVideo(video_id)
            return key
        matches = [k for k in self._videos if k[1] == video_id]
        if not matches:
            raise UnknownVideo(video_id)
        if len(matches) > 1:
            raise UnknownVideo(f"{video_id} (ambiguous across datasets; pass dataset_id)")
        return matches[0]

    def video_label(self, key) -> int:
        return self._videos[self.resolve_key(key)][0].label

    def resolve_path(self, record: FrameRecord) -> Path:
        p = Path(record.image_path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def filter(self, predicate) -> "Manifest":
        """Sub-manifest of records matching ``predicate`` (no invariant re-check)."""
        return Manifest(tuple(r for r in self.records if predicate(r)), root=self.root)


def validate(records: Iterable[FrameRecord], line_numbers: Iterable[int] | None = None) -> None:
    """Raise on duplicate frames, inconsistent videos, split leaks or missing classes."""
    records = list(records)
    line_numbers = list(line_numbers) if line_numbers is not None else list(range(1, len(records) + 1))
    seen_frames: set[tuple[str, str, int]] = set()
    video_label: dict[tuple[str, str], int] = {}
    video_split: dict[tuple[str, str], str] = {}

    for r, ln in zip(records, line_numbers):
        fkey = (r.dataset_id, r.video_id, r.frame_index)
        if fkey in seen_frames:
            raise MalformedRecord(ln, f"duplicate frame {r.frame_index} for video {r.video_id!r}")
        seen_frames.add(fkey)

        vkey = r.video_key
        if vkey in video_split and video_split[vkey] != r.split:
            raise SplitLeak(r.video_id)
        video_split.setdefault(vkey, r.split)
        if vkey in video_label and video_label[vkey] != r.label:
            raise MalformedRecord(ln, f"video {r.video_id!r} has conflicting labels")
        video_label.setdefault(vkey, r.label)

    present = Counter((r.split, r.label) for r in records)
    if not (present[("train", REAL)] or present[("train", FAKE)]):
        raise MissingClass("train", REAL)
    for split in SPLITS:
        if not (present[(split, REAL)] or present[(split, FAKE)]):
            continue
        for label in LABELS:
            if not present[(split, label)]:
                raise MissingClass(split, label)


def parse_manifest(lines: Iterable[str], root: Path | None = None) -> Manifest:
    records, line_numbers = [], []
    for ln, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(ln, f"invalid JSON ({exc.msg})") from None
        records.append(parse_record(obj, ln))
        line_numbers.append(ln)
    validate(records, line_numbers)
    return Manifest(tuple(records), root=root)


def load_manifest(path) -> Manifest:
    """Load and validate a JSON-lines manifest, preserving record order."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh, root=path.parent.resolve())


def dumps_manifest(m: Manifest) -> str:
    return "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in m.records)


def save_manifest(m: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_manifest(m))


def frames_for_video(m: Manifest, video_id, dataset_id: str | None = None) -> list[FrameRecord]:
    """All frames of one video sorted by ``frame_index``."""
    return list(m._videos[m.resolve_key(video_id, dataset_id)])


def uniform_positions(available: int, n: int) -> list[int]:
    """``n`` evenly spaced positions in ``range(available)``, endpoints included."""
    if available <= 0 or n <= 0:
        return []
    if n >= available:
        return list(range(available))
    if n == 1:
        return [(available - 1) // 2]
    return [i * (available - 1) // (n - 1) for i in range(n)]


def sample_frames(m: Manifest, video_id, n: int, seed: int = 0, *,
                  dataset_id: str | None = None, mode: str = "uniform") -> list[FrameRecord]:
    """Pick ``min(n, available)`` frames of a video.

    ``mode="uniform"`` takes evenly spaced frames and ignores ``seed``;
    ``mode="random"`` draws distinct frames with ``seed`` and returns them in
    frame order.
    """
    if n < 1:
        raise ValueError("n must be positive")
    frames = frames_for_video(m, video_id, dataset_id)
    if mode == "uniform":
        positions = uniform_positions(len(frames), n)
    elif mode == "random":
        rng = np.random.default_rng(seed)
        take = min(n, len(frames))
        positions = sorted(rng.choice(len(frames), size=take, replace=False).tolist())
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return [frames[p] for p in positions]
