"""On-disk feature cache.

Layout: ``<root>/<encoder_id>/<dataset>/<video>/<frame>.f32`` holds the
little-endian float32 row-major k x D payload, and a ``.json`` sidecar next
to it holds ``{"k", "D", "regions", "crc32"}`` plus the stack's encoder id
and source. Both files are written via temp-file rename.
"""

from __future__ import annotations

import json
import os
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .encoders import FeatureStack
from .errors import CacheCorrupt, KeyNotFound
from .regions import Region

PAYLOAD_DTYPE = np.dtype("<f4")


def _check_part(part: str) -> str:
    part = str(part)
    if not part or part in (".", "..") or "/" in part or "\\" in part:
        raise ValueError(f"invalid cache key component {part!r}")
    return part


def make_key(encoder_id: str, dataset_id: str, video_id: str, frame_index: int) -> str:
    return "/".join(_check_part(p) for p in (encoder_id, dataset_id, video_id, str(int(frame_index))))


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class FeatureCache:
    def __init__(self, root):
        self.root = Path(root)

    def _paths(self, key: str) -> tuple[Path, Path]:
        parts = [_check_part(p) for p in key.split("/")]
        if len(parts) != 4:
            raise ValueError(f"malformed cache key {key!r}")
        base = self.root.joinpath(*parts[:3])
        return base / f"{parts[3]}.f32", base / f"{parts[3]}.json"

    def key_for(self, s: FeatureStack) -> str:
        if len(s.source) != 3:
            raise ValueError("stack source must be (dataset_id, video_id, frame_index)")
        return make_key(s.encoder_id, *s.source)

    def put(self, s: FeatureStack) -> str:
        key = self.key_for(s)
        payload_path, meta_path = self._paths(key)
        payload = np.ascontiguousarray(s.rows, dtype=PAYLOAD_DTYPE).tobytes(order="C")
        meta = {
            "k": s.k,
            "D": s.dim,
            "regions": [r.value for r in s.region_ids],
            "crc32": zlib.crc32(payload),
            "encoder_id": s.encoder_id,
            "source": [s.source[0], s.source[1], int(s.source[2])],
        }
        _atomic_write(payload_path, payload)
        _atomic_write(meta_path, json.dumps(meta, sort_keys=True).encode("utf-8"))
        return key

    def get(self, key: str) -> FeatureStack:
        payload_path, meta_path = self._paths(key)
        if not payload_path.is_file() or not meta_path.is_file():
            raise KeyNotFound(key)
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            k, dim, crc = int(meta["k"]), int(meta["D"]), int(meta["crc32"])
            regions = tuple(Region(r) for r in meta["regions"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CacheCorrupt(key, f"bad sidecar ({exc})") from None
        payload = payload_path.read_bytes()
        if len(payload) != k * dim * PAYLOAD_DTYPE.itemsize or len(regions) != k:
            raise CacheCorrupt(key, "payload size does not match sidecar")
        if zlib.crc32(payload) != crc:
            raise CacheCorrupt(key)
        rows = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).reshape(k, dim).copy()
        src = meta.get("source") or key.split("/")[1:]
        try:
            return FeatureStack(rows, regions, meta.get("encoder_id", key.split("/")[0]),
                                (src[0], src[1], int(src[2])))
        except ValueError as exc:
            raise CacheCorrupt(key, str(exc)) from None

    def __contains__(self, key: str) -> bool:
        payload_path, meta_path = self._paths(key)
        return payload_path.is_file() and meta_path.is_file()

    def delete(self, key: str) -> None:
        for p in self._paths(key):
            p.unlink(missing_ok=True)
