"""Frame- and video-level ROC AUC."""

from __future__ import annotations

from collections import OrderedDict
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyVideo, LengthMismatch, SingleClassEval


def frame_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Tied scores across classes count one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise LengthMismatch(f"{s.shape} scores vs {y.shape} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassEval("AUC needs both real and fake samples")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def video_scores(groups: Mapping[Hashable, Sequence[float]] | Iterable[tuple[Hashable, Sequence[float]]]
                 ) -> "OrderedDict[Hashable, float]":
    """Mean frame score of every video, preserving the given video order."""
    items = groups.items() if isinstance(groups, Mapping) else groups
    out: OrderedDict = OrderedDict()
    for key, frames in items:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.size == 0:
            raise EmptyVideo(f"video {key!r} has no scored frames")
        out[key] = float(frames.sum() / frames.size)
    return out


def group_by_video(keys: Sequence[Hashable], scores: Sequence[float]) -> "OrderedDict[Hashable, list[float]]":
    groups: OrderedDict = OrderedDict()
    for key, score in zip(keys, scores):
        groups.setdefault(key, []).append(float(score))
    return groups


def video_auc(keys: Sequence[Hashable], scores: Sequence[float], labels: Sequence[int]) -> float:
    """AUC over per-video mean scores; each video takes the label of its frames."""
    groups = group_by_video(keys, scores)
    video_label: dict = {}
    for key, label in zip(keys, labels):
        if video_label.setdefault(key, int(label)) != int(label):
            raise ValueError(f"video {key!r} mixes labels")
    means = video_scores(groups)
    return frame_auc(list(means.values()), [video_label[k] for k in means])


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """False/true positive rates at every distinct threshold, from (0, 0) to (1, 1)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    distinct = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tps = np.cumsum(y)[distinct]
    fps = (distinct + 1) - tps
    tpr = np.r_[0.0, tps / max(y.sum(), 1)]
    fpr = np.r_[0.0, fps / max((~y).sum(), 1)]
    return fpr, tpr
