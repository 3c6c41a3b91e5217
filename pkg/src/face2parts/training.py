"""Triplet sampling, triplet-network training and the FC classifier head."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .encoders import FeatureStack, region_rows
from .errors import InsufficientClassSamples, NonFiniteLoss, SingleClassTrainingSet
from .manifest import FAKE, REAL, FrameRecord
from .model import EMBED_DIM, HIDDEN_DIM, FCClassifier, TripletNetwork, embed_many, triplet_forward, triplet_loss
from .regions import REGIONS, Region, canonical

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.0
    learning_rate: float = 1e-4
    batch_size: int = 100
    epochs: int = 20
    optimizer: str = "adam"
    seed: int = 0
    active_regions: tuple[Region, ...] = REGIONS
    gate: str = "sigmoid"
    hidden_dim: int = HIDDEN_DIM
    embed_dim: int = EMBED_DIM
    classifier_epochs: int = 200
    classifier_lr: float = 1e-2
    classifier_hidden: int = 0

    def __post_init__(self):
        object.__setattr__(self, "active_regions", canonical(self.active_regions))
        if not self.active_regions:
            raise ValueError("active_regions must not be empty")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.margin < 0 or self.batch_size < 1 or self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("margin, batch_size, epochs and learning_rate must be non-negative")

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["active_regions"] = [r.value for r in self.active_regions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "active_regions" in d:
            d["active_regions"] = tuple(Region.parse(r) for r in d["active_regions"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Stacked features of many frames (``x`` is n x k x D) with their records."""

    x: np.ndarray
    records: tuple[FrameRecord, ...]
    region_ids: tuple[Region, ...] = REGIONS
    encoder_id: str = ""

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float32)
        if x.ndim != 3 or len(x) != len(self.records) or x.shape[1] != len(self.region_ids):
            raise ValueError(f"features {x.shape} do not match {len(self.records)} records "
                             f"x {len(self.region_ids)} regions")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "region_ids", canonical(self.region_ids))

    def __len__(self):
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.fromiter((r.label for r in self.records), dtype=np.int64, count=len(self.records))

    @property
    def video_keys(self) -> list[tuple[str, str]]:
        return [r.video_key for r in self.records]

    def take(self, idx) -> "FeatureSet":
        idx = np.asarray(idx)
        idx = np.nonzero(idx)[0] if idx.dtype == bool else idx.astype(np.int64, copy=False)
        return FeatureSet(self.x[idx], tuple(self.records[i] for i in idx), self.region_ids, self.encoder_id)

    def where(self, predicate) -> "FeatureSet":
        return self.take([i for i, r in enumerate(self.records) if predicate(r)])

    def with_regions(self, regions) -> "FeatureSet":
        rows = region_rows(self.region_ids, regions)
        return FeatureSet(self.x[:, rows], self.records, canonical(regions), self.encoder_id)

    def stack(self, i: int) -> FeatureStack:
        r = self.records[i]
        return FeatureStack(self.x[i], self.region_ids, self.encoder_id,
                            (r.dataset_id, r.video_id, r.frame_index))

    @classmethod
    def from_stacks(cls, stacks: Sequence[FeatureStack], records: Sequence[FrameRecord]) -> "FeatureSet":
        if not stacks:
            raise ValueError("no feature stacks")
        regions = stacks[0].region_ids
        return cls(np.stack([s.rows for s in stacks]), tuple(records), regions, stacks[0].encoder_id)


# -- triplet sampling --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TripletBatch:
    """Index triplets into a FeatureSet; anchors alternate real, fake, real, ..."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    anchor_labels: np.ndarray

    def __len__(self):
        return len(self.anchors)

    def stacks(self, features: FeatureSet):
        take = features.stack
        return ([take(i) for i in self.anchors], [take(i) for i in self.positives],
                [take(i) for i in self.negatives])


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_triplets(labels, batch_size: int, seed=0) -> TripletBatch:
    """Draw ``batch_size`` (anchor, positive, negative) index triplets.

    ``labels`` is the label array of the candidate pool (or a FeatureSet).
    Anchors alternate between the classes regardless of class imbalance, the
    positive is a different sample of the anchor's class and the negative
    comes from the other class. Sampling is with replacement across triplets.
    """
    if isinstance(labels, FeatureSet):
        labels = labels.labels
    labels = np.asarray(labels)
    rng = _rng(seed)
    pools = {c: np.nonzero(labels == c)[0] for c in (REAL, FAKE)}
    for c in (REAL, FAKE):
        if len(pools[c]) < 2:
            raise InsufficientClassSamples(c)

    anchor_labels = np.arange(batch_size) % 2
    anchors = np.empty(batch_size, dtype=np.int64)
    positives = np.empty(batch_size, dtype=np.int64)
    negatives = np.empty(batch_size, dtype=np.int64)
    for c in (REAL, FAKE):
        slots = np.nonzero(anchor_labels == c)[0]
        pool, other = pools[c], pools[1 - c]
        a_pos = rng.integers(0, len(pool), size=len(slots))
        p_pos = rng.integers(0, len(pool) - 1, size=len(slots))
        p_pos += p_pos >= a_pos  # skip the anchor itself
        anchors[slots] = pool[a_pos]
        positives[slots] = pool[p_pos]
        negatives[slots] = other[rng.integers(0, len(other), size=len(slots))]
    return TripletBatch(anchors, positives, negatives, anchor_labels)


# -- phase 2: triplet network ------------------------------------------------

@dataclass
class TrainResult:
    network: TripletNetwork
    losses: list[float] = field(default_factory=list)


def build_network(features: FeatureSet, cfg: TrainConfig) -> TripletNetwork:
    return TripletNetwork(len(features.region_ids), features.x.shape[2], cfg.hidden_dim,
                          cfg.embed_dim, seed=cfg.seed, gate=cfg.gate)


def train_triplet(features: FeatureSet, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Train the triplet network on ``features`` restricted to ``cfg.active_regions``.

    An epoch is ceil(n / batch_size) freshly sampled batches.
    """
    feats = features.with_regions(cfg.active_regions)
    labels = feats.labels
    rng = np.random.default_rng(cfg.seed)
    net = build_network(feats, cfg)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    x = torch.from_numpy(feats.x)
    steps = max(1, math.ceil(len(feats) / cfg.batch_size))

    losses: list[float] = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for step in range(steps):
            batch = sample_triplets(labels, cfg.batch_size, rng)
            fa, fp, fn = triplet_forward(x[batch.anchors], x[batch.positives], x[batch.negatives], net)
            loss = triplet_loss(fa, fp, fn, cfg.margin)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss {loss.item()} at epoch {epoch + 1}, step {step + 1} "
                                    f"(lr={cfg.learning_rate}, margin={cfg.margin})")
            opt.zero_grad()
            loss.backward()
            if cfg.learning_rate > 0:
                opt.step()
            total += loss.item()
        losses.append(total / steps)
        log.debug("epoch %d/%d mean loss %.6f", epoch + 1, cfg.epochs, losses[-1])
    net.eval()
    return TrainResult(net, losses)


# -- phase 3: classifier -----------------------------------------------------

def train_classifier(embeddings, labels, cfg: TrainConfig = TrainConfig()) -> FCClassifier:
    """Fit the FC head with binary cross-entropy, full batch, Adam."""
    y = np.asarray(labels)
    if len(np.unique(y)) < 2:
        raise SingleClassTrainingSet("classifier training data has a single class")
    x = torch.as_tensor(np.asarray(embeddings), dtype=torch.float32)
    t = torch.as_tensor(y, dtype=torch.float32)
    clf = FCClassifier(x.shape[1], cfg.classifier_hidden, seed=cfg.seed)
    clf.fit_standardization(x)
    opt = torch.optim.Adam(clf.parameters(), lr=cfg.classifier_lr)
    loss_fn = nn.BCEWithLogitsLoss()
    for _ in range(cfg.classifier_epochs):
        loss = loss_fn(clf(x), t)
        if not torch.isfinite(loss):
            raise NonFiniteLoss("classifier loss became non-finite")
        opt.zero_grad()
        loss.backward()
        opt.step()
    clf.eval()
    return clf


@dataclass
class Detector:
    """Frozen triplet network plus classifier, bound to a region subset."""

    network: TripletNetwork
    classifier: FCClassifier
    regions: tuple[Region, ...]
    losses: list[float] = field(default_factory=list)

    def embed(self, features: FeatureSet) -> np.ndarray:
        return embed_many(features.with_regions(self.regions).x, self.network)

    def predict_proba(self, features: FeatureSet) -> np.ndarray:
        emb = torch.from_numpy(self.embed(features))
        with torch.no_grad():
            return self.classifier.predict_proba(emb).numpy().astype(np.float64)


def fit_detector(train: FeatureSet, cfg: TrainConfig = TrainConfig()) -> Detector:
    """Phase 2 then phase 3: train the triplet network, freeze it, fit the classifier."""
    result = train_triplet(train, cfg)
    for p in result.network.parameters():
        p.requires_grad_(False)
    emb = embed_many(train.with_regions(cfg.active_regions).x, result.network)
    clf = train_classifier(emb, train.labels, cfg)
    return Detector(result.network, clf, cfg.active_regions, result.losses)
