"""Region encoders and hierarchical feature stacks.

Encoders are looked up by id in a registry. Only the download-free
``test-stat`` encoder ships with the package; real backbones (CLIP
ViT-B/16, ViT-B/32, ViT-L/14, video transformers, ...) plug in either by
calling :func:`register_encoder` or through the ``face2parts.encoders``
entry-point group, whose targets are zero-argument callables returning
``(EncoderSpec, backend)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .errors import (BackendFailure, DimensionMismatch, EmptySubset, MissingRegion,
                     ShapeMismatch, UnknownEncoder, UnknownRegion)
from .regions import CROP_SIZE, REGIONS, Region, canonical

log = logging.getLogger(__name__)

ENTRY_POINT_GROUP = "face2parts.encoders"

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


@dataclass(frozen=True)
class EncoderSpec:
    encoder_id: str
    feature_dim: int
    modality: str = "spatial"  # "spatial" | "temporal"
    clip_length: int = 1
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.feature_dim <= 0:
            raise ValueError("feature_dim must be positive")
        if self.modality not in ("spatial", "temporal"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if (self.clip_length == 1) != (self.modality == "spatial"):
            raise ValueError("clip_length must be 1 exactly for spatial encoders")
        if self.clip_length < 1:
            raise ValueError("clip_length must be positive")
        if not self.encoder_id or self.encoder_id.startswith(("_", ".")) or "/" in self.encoder_id:
            raise ValueError(f"invalid encoder id {self.encoder_id!r}")

    @property
    def input_shape(self) -> tuple[int, ...]:
        frame = (CROP_SIZE, CROP_SIZE, 3)
        return frame if self.modality == "spatial" else (self.clip_length, *frame)


class EncoderBackend(Protocol):
    def __call__(self, batch: np.ndarray) -> np.ndarray:
        """Map an ``(n, *input_shape)`` batch to an ``(n, D)`` feature matrix."""


class TestStatEncoder:
    """Per-channel mean and standard deviation of a crop (or a clip of crops).

    The crop is expected un-normalized, which is what the identity
    normalization of :data:`TEST_STAT` hands over.
    """

    __test__ = False  # keep pytest from collecting this class

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        x = np.asarray(batch, dtype=np.float64)
        flat = x.reshape(x.shape[0], -1, 3)
        return np.concatenate([flat.mean(axis=1), flat.std(axis=1)], axis=1)


TEST_STAT = EncoderSpec("test-stat", 6)

_REGISTRY: dict[str, Callable[[], tuple[EncoderSpec, EncoderBackend]]] = {
    TEST_STAT.encoder_id: lambda: (TEST_STAT, TestStatEncoder()),
}


def register_encoder(encoder_id: str, factory: Callable[[], tuple[EncoderSpec, EncoderBackend]]) -> None:
    _REGISTRY[encoder_id] = factory


def _load_entry_points() -> None:
    from importlib.metadata import entry_points

    try:
        eps = entry_points(group=ENTRY_POINT_GROUP)
    except TypeError:  # pragma: no cover - python < 3.10 API
        eps = entry_points().get(ENTRY_POINT_GROUP, [])
    for ep in eps:
        _REGISTRY.setdefault(ep.name, ep.load())


def available_encoders() -> list[str]:
    _load_entry_points()
    return sorted(_REGISTRY)


def get_encoder(encoder_id: str) -> tuple[EncoderSpec, EncoderBackend]:
    if encoder_id not in _REGISTRY:
        _load_entry_points()
    if encoder_id not in _REGISTRY:
        raise UnknownEncoder(encoder_id)
    spec, backend = _REGISTRY[encoder_id]()
    if spec.encoder_id != encoder_id:
        raise UnknownEncoder(f"{encoder_id} (factory returned {spec.encoder_id!r})")
    return spec, backend


def encode(crops: Sequence[np.ndarray], spec: EncoderSpec, backend: EncoderBackend,
           batch_size: int = 64) -> list[np.ndarray]:
    """One D-vector per encoder-ready input, in input order."""
    arrays = [np.asarray(c, dtype=np.float32) for c in crops]
    for i, a in enumerate(arrays):
        if a.shape != spec.input_shape:
            raise ShapeMismatch(f"input {i} has shape {a.shape}, {spec.encoder_id} expects {spec.input_shape}")
    out: list[np.ndarray] = []
    for start in range(0, len(arrays), batch_size):
        chunk = np.stack(arrays[start:start + batch_size])
        try:
            feats = np.asarray(backend(chunk), dtype=np.float64)
        except Exception as exc:
            raise BackendFailure(f"{spec.encoder_id}: {exc}") from exc
        if feats.shape != (len(chunk), spec.feature_dim):
            raise BackendFailure(f"{spec.encoder_id} returned shape {feats.shape}, "
                                 f"expected {(len(chunk), spec.feature_dim)}")
        if not np.all(np.isfinite(feats)):
            raise BackendFailure(f"{spec.encoder_id} returned non-finite features")
        out.extend(feats)
    return out


@dataclass(frozen=True, eq=False)
class FeatureStack:
    """k x D matrix of region features, rows in canonical region order."""

    rows: np.ndarray
    region_ids: tuple[Region, ...]
    encoder_id: str
    source: tuple = field(default=())

    def __post_init__(self):
        rows = np.asarray(self.rows)
        regions = tuple(Region.parse(r) for r in self.region_ids)
        if rows.ndim != 2 or rows.shape[0] != len(regions):
            raise DimensionMismatch(f"rows shape {rows.shape} does not match {len(regions)} regions")
        if not 1 <= len(regions) <= len(REGIONS) or canonical(regions) != regions:
            raise ValueError(f"region_ids must be a canonically ordered subset, got {regions}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("feature stack contains non-finite values")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "region_ids", regions)
        object.__setattr__(self, "source", tuple(self.source))

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureStack):
            return NotImplemented
        return (self.region_ids == other.region_ids and self.encoder_id == other.encoder_id
                and self.source == other.source and self.rows.dtype == other.rows.dtype
                and np.array_equal(self.rows, other.rows))

    def row(self, region) -> np.ndarray:
        return self.rows[self.region_ids.index(Region.parse(region))]


def stack_features(features: Mapping, encoder_id: str = "", source: tuple = (),
                   regions: Sequence = REGIONS) -> FeatureStack:
    """Stack per-region vectors coarse-to-fine; all of ``regions`` must be present."""
    feats = {Region.parse(r): np.asarray(v) for r, v in features.items()}
    wanted = canonical(regions)
    for region in wanted:
        if region not in feats:
            raise MissingRegion(region)
    dims = {feats[r].shape for r in wanted}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise DimensionMismatch(f"region features have inconsistent shapes {sorted(dims)}")
    rows = np.stack([feats[r] for r in wanted])
    return FeatureStack(rows, wanted, encoder_id, source)


def subset_stack(s: FeatureStack, regions) -> FeatureStack:
    """Keep only ``regions`` (canonical order preserved)."""
    wanted = canonical(regions)
    if not wanted:
        raise EmptySubset("region subset is empty")
    missing = [r for r in wanted if r not in s.region_ids]
    if missing:
        raise UnknownRegion(missing[0])
    idx = [s.region_ids.index(r) for r in wanted]
    return FeatureStack(s.rows[idx], wanted, s.encoder_id, s.source)


def region_rows(region_ids: Sequence[Region], regions) -> list[int]:
    """Row indices of ``regions`` inside a stack laid out as ``region_ids``."""
    wanted = canonical(regions)
    if not wanted:
        raise EmptySubset("region subset is empty")
    try:
        return [list(region_ids).index(r) for r in wanted]
    except ValueError:
        raise UnknownRegion(str(wanted)) from None
