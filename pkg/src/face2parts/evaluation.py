"""Evaluation protocols, reports and ablation studies."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ProtocolDataMissing
from .metrics import frame_auc, video_auc
from .regions import LEVELS, REGIONS, Region, canonical, regions_for_levels
from .training import Detector, FeatureSet, TrainConfig, fit_detector

log = logging.getLogger(__name__)

# level combinations of the hierarchy ablation: {1}, {2}, {3}, {1,2}, {1,3}, {2,3}, {1,2,3}
LEVEL_COMBOS: tuple[tuple[int, ...], ...] = ((1,), (2,), (3,), (1, 2), (1, 3), (2, 3), (1, 2, 3))
LEVEL_COMBO_REGIONS: tuple[tuple[Region, ...], ...] = tuple(regions_for_levels(c) for c in LEVEL_COMBOS)
MARGINS = (0.0, 0.1, 0.2, 0.3)


@dataclass(frozen=True)
class Protocol:
    """Which data trains the detector and which targets it is scored on.

    ``intra``: train and test splits of ``dataset`` (or of every dataset).
    ``inter``: train split of ``train[0]``, test splits of each ``test`` dataset.
    ``inter_manipulation``: within ``dataset``, train on reals plus the
    ``train`` manipulation types, test on reals plus each ``test`` type.
    """

    kind: str = "intra"
    train: tuple[str, ...] = ()
    test: tuple[str, ...] = ()
    dataset: str | None = None

    def __post_init__(self):
        if self.kind not in ("intra", "inter", "inter_manipulation"):
            raise ValueError(f"unknown protocol {self.kind!r}")
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))

    @classmethod
    def intra(cls, dataset: str | None = None) -> "Protocol":
        return cls("intra", dataset=dataset)

    @classmethod
    def inter(cls, train_dataset: str, test_datasets: Iterable[str]) -> "Protocol":
        return cls("inter", (train_dataset,), tuple(test_datasets))

    @classmethod
    def inter_manipulation(cls, train_manipulations, test_manipulations, dataset: str | None = None) -> "Protocol":
        if isinstance(train_manipulations, str):
            train_manipulations = (train_manipulations,)
        return cls("inter_manipulation", tuple(train_manipulations), tuple(test_manipulations), dataset)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "train": list(self.train), "test": list(self.test), "dataset": self.dataset}

    @classmethod
    def from_dict(cls, d: dict) -> "Protocol":
        return cls(d.get("kind", "intra"), tuple(d.get("train", ())), tuple(d.get("test", ())), d.get("dataset"))


def _datasets(features: FeatureSet) -> list[str]:
    seen: dict[str, None] = {}
    for r in features.records:
        seen.setdefault(r.dataset_id)
    return list(seen)


def _single_dataset(features: FeatureSet, protocol: Protocol) -> str:
    if protocol.dataset is not None:
        return protocol.dataset
    names = _datasets(features)
    if len(names) != 1:
        raise ProtocolDataMissing(f"protocol needs a dataset name; data has {names}")
    return names[0]


def _require(fs: FeatureSet, what: str) -> FeatureSet:
    if len(fs) == 0:
        raise ProtocolDataMissing(f"no samples for {what}")
    if len(set(fs.labels.tolist())) < 2:
        raise ProtocolDataMissing(f"{what} lacks real or fake samples")
    return fs


def training_data(features: FeatureSet, protocol: Protocol) -> FeatureSet:
    if protocol.kind == "intra":
        ds = _single_dataset(features, protocol)
        sel = features.where(lambda r: r.split == "train" and r.dataset_id == ds)
        return _require(sel, f"train split of {ds}")
    if protocol.kind == "inter":
        if len(protocol.train) != 1:
            raise ValueError("inter protocol trains on exactly one dataset")
        ds = protocol.train[0]
        return _require(features.where(lambda r: r.split == "train" and r.dataset_id == ds),
                        f"train split of {ds}")
    ds = _single_dataset(features, protocol)
    train_m = set(protocol.train)
    sel = features.where(lambda r: r.split == "train" and r.dataset_id == ds
                         and (r.label == 0 or r.manipulation_id in train_m))
    return _require(sel, f"train split of {ds} / {sorted(train_m)}")


def test_targets(features: FeatureSet, protocol: Protocol) -> dict[str, FeatureSet]:
    """Named test subsets for ``protocol``, in report order."""
    if protocol.kind == "intra":
        ds = _single_dataset(features, protocol)
        return {ds: _require(features.where(lambda r: r.split == "test" and r.dataset_id == ds),
                             f"test split of {ds}")}
    if protocol.kind == "inter":
        if not protocol.test:
            raise ProtocolDataMissing("inter protocol lists no test datasets")
        out = {}
        for ds in protocol.test:
            out[ds] = _require(features.where(lambda r, ds=ds: r.split == "test" and r.dataset_id == ds),
                               f"test split of {ds}")
        return out
    ds = _single_dataset(features, protocol)
    if not protocol.test:
        raise ProtocolDataMissing("inter-manipulation protocol lists no test manipulations")
    out = {}
    for m in protocol.test:
        sel = features.where(lambda r, m=m: r.split == "test" and r.dataset_id == ds
                             and (r.label == 0 or r.manipulation_id == m))
        out[f"{ds}/{m}"] = _require(sel, f"test split of {ds}/{m}")
    return out


test_targets.__test__ = False  # not a pytest test


@dataclass(frozen=True)
class TargetResult:
    frame_auc: float
    video_auc: float
    n_frames: int
    n_videos: int


@dataclass
class EvalReport:
    results: dict[str, TargetResult]
    regions: tuple[Region, ...] = REGIONS
    protocol: Protocol = field(default_factory=Protocol)
    config: dict = field(default_factory=dict)
    encoder_id: str = ""

    @property
    def fingerprint(self) -> str:
        blob = json.dumps({"config": self.config, "protocol": self.protocol.to_dict(),
                           "regions": [r.value for r in self.regions], "encoder_id": self.encoder_id},
                          sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "encoder_id": self.encoder_id,
            "regions": [r.value for r in self.regions],
            "levels": sorted({r.level for r in self.regions}),
            "protocol": self.protocol.to_dict(),
            "config": self.config,
            "results": {name: {"frame_auc": t.frame_auc, "video_auc": t.video_auc,
                               "n_frames": t.n_frames, "n_videos": t.n_videos}
                        for name, t in self.results.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls({k: TargetResult(**v) for k, v in d["results"].items()},
                   tuple(Region(r) for r in d["regions"]), Protocol.from_dict(d["protocol"]),
                   d.get("config", {}), d.get("encoder_id", ""))

    def to_table(self) -> str:
        rows = [(name, f"{100 * t.frame_auc:.2f}", f"{100 * t.video_auc:.2f}", str(t.n_frames), str(t.n_videos))
                for name, t in self.results.items()]
        return format_table(("target", "F-AUC", "V-AUC", "frames", "videos"), rows)

    @property
    def mean_frame_auc(self) -> float:
        return float(np.mean([t.frame_auc for t in self.results.values()]))

    @property
    def mean_video_auc(self) -> float:
        return float(np.mean([t.video_auc for t in self.results.values()]))


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    def line(cells):
        first, *rest = cells
        return "  ".join([str(first).ljust(widths[0])] + [str(c).rjust(w) for c, w in zip(rest, widths[1:])])
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep, *(line(r) for r in rows)]) + "\n"


def score_targets(features: FeatureSet, detector: Detector, protocol: Protocol) -> dict[str, tuple]:
    """``{target: (scores, labels, video_keys)}`` for every test target."""
    out = {}
    for name, fs in test_targets(features, protocol).items():
        out[name] = (detector.predict_proba(fs), fs.labels, fs.video_keys)
    return out


def evaluate(features: FeatureSet, detector: Detector, protocol: Protocol = Protocol(),
             config: TrainConfig | None = None) -> EvalReport:
    """Frame- and video-level AUC of ``detector`` on every test target of ``protocol``."""
    results = {}
    for name, (scores, labels, keys) in score_targets(features, detector, protocol).items():
        results[name] = TargetResult(frame_auc(scores, labels), video_auc(keys, scores, labels),
                                     len(scores), len(set(keys)))
    cfg = config.to_dict() if config is not None else {}
    return EvalReport(results, detector.regions, protocol, cfg, features.encoder_id)


def run_protocol(features: FeatureSet, cfg: TrainConfig = TrainConfig(),
                 protocol: Protocol = Protocol()) -> tuple[EvalReport, Detector]:
    """Train on the protocol's training data, then evaluate."""
    detector = fit_detector(training_data(features, protocol), cfg)
    return evaluate(features, detector, protocol, cfg), detector


def ablate_levels(features: FeatureSet, cfg: TrainConfig = TrainConfig(),
                  combos: Sequence = LEVEL_COMBO_REGIONS,
                  protocol: Protocol = Protocol()) -> list[tuple[tuple[Region, ...], EvalReport]]:
    """One full train + evaluate cycle per region subset; combo i uses seed ``cfg.seed + i``."""
    out = []
    for i, combo in enumerate(combos):
        regions = canonical(combo)
        run_cfg = cfg.replace(active_regions=regions, seed=cfg.seed + i)
        log.info("ablation %d/%d: %s", i + 1, len(combos), ",".join(r.value for r in regions))
        report, _ = run_protocol(features, run_cfg, protocol)
        out.append((regions, report))
    return out


def margin_study(features: FeatureSet, cfg: TrainConfig = TrainConfig(), margins: Sequence[float] = MARGINS,
                 protocol: Protocol = Protocol()) -> list[tuple[float, EvalReport]]:
    """Retrain detector and classifier once per margin, same seed."""
    out = []
    for m in margins:
        report, _ = run_protocol(features, cfg.replace(margin=float(m)), protocol)
        out.append((float(m), report))
    return out


def combo_label(regions: Sequence[Region]) -> str:
    regions = canonical(regions)
    levels = sorted({r.level for r in regions})
    if regions == regions_for_levels(levels):
        return "L" + "+".join(str(lv) for lv in levels)
    return "+".join(r.value for r in regions)


def study_table(rows: Sequence[tuple[str, EvalReport]], key_header: str) -> str:
    targets: list[str] = []
    for _, rep in rows:
        for name in rep.results:
            if name not in targets:
                targets.append(name)
    header = [key_header] + [f"{t} {m}" for t in targets for m in ("F-AUC", "V-AUC")]
    body = []
    for key, rep in rows:
        cells = [key]
        for t in targets:
            r = rep.results.get(t)
            cells += [f"{100 * r.frame_auc:.2f}", f"{100 * r.video_auc:.2f}"] if r else ["-", "-"]
        body.append(cells)
    return format_table(header, body)


def study_json(rows: Sequence[tuple[str, EvalReport]], key_name: str) -> str:
    return json.dumps([{key_name: key, "report": rep.to_dict()} for key, rep in rows],
                      indent=2, sort_keys=True) + "\n"


# -- optional figures --------------------------------------------------------

def save_roc_plot(scored: dict[str, tuple], path) -> None:
    """ROC curves of every target into one image file."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .metrics import roc_curve

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for name, (scores, labels, _) in scored.items():
        fpr, tpr = roc_curve(scores, labels)
        ax.plot(fpr, tpr, label=f"{name} (AUC {frame_auc(scores, labels):.3f})")
    ax.plot([0, 1], [0, 1], ls="--", c="grey", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_region_bars(rows: Sequence[tuple[str, EvalReport]], path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [k for k, _ in rows]
    f_auc = [rep.mean_frame_auc for _, rep in rows]
    v_auc = [rep.mean_video_auc for _, rep in rows]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2, 3.5))
    ax.bar(x - 0.2, f_auc, 0.4, label="F-AUC")
    ax.bar(x + 0.2, v_auc, 0.4, label="V-AUC")
    ax.set_xticks(x, names, rotation=30, ha="right")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


__all__ = [
    "LEVELS", "LEVEL_COMBOS", "LEVEL_COMBO_REGIONS", "MARGINS", "EvalReport", "Protocol", "TargetResult",
    "ablate_levels", "combo_label", "evaluate", "margin_study", "run_protocol", "score_targets",
    "study_json", "study_table", "test_targets", "training_data",
]
