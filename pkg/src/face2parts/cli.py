"""Command-line front end.

Subcommands ``extract``, ``featurize``, ``train``, ``evaluate`` and
``ablate``. Settings come from a YAML config file (``--config``) and are
overridden by flags; ``F2P_CACHE`` overrides the cache root. Logs go to
stderr, results to files, and one summary line to stdout.

Exit codes: 0 success, 1 fatal error, 2 completed with skipped frames.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import __version__
from .cache import FeatureCache
from .encoders import available_encoders, get_encoder
from .errors import Face2PartsError
from .evaluation import (LEVEL_COMBO_REGIONS, MARGINS, Protocol, combo_label, evaluate,
                         margin_study, ablate_levels, save_region_bars, save_roc_plot, score_targets,
                         study_json, study_table, training_data)
from .landmarks import make_provider
from .manifest import load_manifest
from .model import load_checkpoint, save_checkpoint
from .pipeline import DEFAULT_FRAME_BUDGET, extract, feature_digest, featurize, load_features
from .regions import Region, parse_regions
from .training import Detector, TrainConfig, fit_detector

log = logging.getLogger("face2parts")

EXIT_OK, EXIT_FATAL, EXIT_SKIPS = 0, 1, 2
CROPS_DIR = "_crops"


@dataclass
class RunConfig:
    manifest: Path | None = None
    cache_dir: Path = Path("f2p-cache")
    checkpoint_dir: Path = Path("f2p-out")
    report_dir: Path = Path("f2p-out")
    encoder_id: str = "test-stat"
    detector: str = "template"
    frame_budget: int = DEFAULT_FRAME_BUDGET
    log_level: str = "WARNING"
    train: TrainConfig = field(default_factory=TrainConfig)
    protocol: Protocol = field(default_factory=Protocol)
    study: str = "levels"
    combos: tuple = LEVEL_COMBO_REGIONS
    margins: tuple = MARGINS
    plot: bool = False
    force: bool = False

    @property
    def crop_root(self) -> Path:
        return self.cache_dir / CROPS_DIR

    @property
    def feature_root(self) -> Path:
        return self.cache_dir


def _path(value, base: Path) -> Path:
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def _combos(value) -> tuple:
    out = []
    for item in value:
        if isinstance(item, (list, tuple)):
            item = ",".join(str(x) for x in item)
        out.append(parse_regions(str(item)))
    return tuple(out)


def load_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    raw: dict = {}
    base = Path.cwd()
    if args.config:
        cfg_path = Path(args.config)
        with open(cfg_path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"{cfg_path}: top level must be a mapping")
        base = cfg_path.resolve().parent

    if "manifest" in raw:
        cfg.manifest = _path(raw["manifest"], base)
    for name in ("cache_dir", "checkpoint_dir", "report_dir"):
        if name in raw:
            setattr(cfg, name, _path(raw[name], base))
    if "out" in raw:
        cfg.checkpoint_dir = cfg.report_dir = _path(raw["out"], base)
    for name in ("encoder_id", "detector", "log_level", "study"):
        if name in raw:
            setattr(cfg, name, str(raw[name]))
    if "encoder" in raw:
        cfg.encoder_id = str(raw["encoder"])
    if "frame_budget" in raw:
        cfg.frame_budget = int(raw["frame_budget"])
    train = dict(raw.get("train") or {})
    if "regions" in train:
        r = train.pop("regions")
        train["active_regions"] = parse_regions(r if isinstance(r, str) else ",".join(map(str, r)))
    elif "active_regions" in train:
        train["active_regions"] = tuple(Region.parse(r) for r in train["active_regions"])
    cfg.train = TrainConfig(**train)
    if "protocol" in raw:
        cfg.protocol = Protocol.from_dict(raw["protocol"] or {})
    if "combos" in raw:
        cfg.combos = _combos(raw["combos"])
    if "margins" in raw:
        cfg.margins = tuple(float(m) for m in raw["margins"])

    env_cache = os.environ.get("F2P_CACHE")
    if env_cache:
        cfg.cache_dir = Path(env_cache)

    # flags win
    if getattr(args, "manifest", None):
        cfg.manifest = Path(args.manifest)
    if getattr(args, "cache", None):
        cfg.cache_dir = Path(args.cache)
    if getattr(args, "out", None):
        cfg.checkpoint_dir = cfg.report_dir = Path(args.out)
    if getattr(args, "encoder", None):
        cfg.encoder_id = args.encoder
    if getattr(args, "detector", None):
        cfg.detector = args.detector
    if getattr(args, "frames", None) is not None:
        cfg.frame_budget = args.frames
    if getattr(args, "log_level", None):
        cfg.log_level = args.log_level
    overrides = {}
    for flag, name in (("regions", "active_regions"), ("seed", "seed"), ("margin", "margin"),
                       ("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "learning_rate")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = parse_regions(value) if flag == "regions" else value
    if overrides:
        cfg.train = cfg.train.replace(**overrides)
    if getattr(args, "protocol", None):
        cfg.protocol = _parse_protocol(args.protocol, args)
    if getattr(args, "study", None):
        cfg.study = args.study
    if getattr(args, "combos", None):
        cfg.combos = _combos(args.combos.split(";"))
    cfg.plot = bool(getattr(args, "plot", False))
    cfg.force = bool(getattr(args, "force", False))

    if cfg.study not in ("levels", "margins"):
        raise ValueError(f"unknown study {cfg.study!r}")
    if cfg.frame_budget < 1:
        raise ValueError("frame budget must be positive")
    return cfg


def _parse_protocol(kind: str, args) -> Protocol:
    split = lambda s: tuple(x for x in (s or "").split(",") if x)  # noqa: E731
    if kind == "intra":
        return Protocol.intra(args.dataset)
    if kind == "inter":
        return Protocol("inter", split(args.train_on), split(args.test_on))
    return Protocol("inter_manipulation", split(args.train_on), split(args.test_on), args.dataset)


# -- commands ----------------------------------------------------------------

def _require_manifest(cfg: RunConfig):
    if cfg.manifest is None:
        raise ValueError("no manifest given (use --manifest or the config file)")
    return load_manifest(cfg.manifest)


def _lock(cfg: RunConfig):
    from filelock import FileLock

    cfg.cache_dir.mkdir(parents=True, exist_ok=True)
    return FileLock(str(cfg.cache_dir / ".lock"), timeout=30)


def cmd_extract(cfg: RunConfig) -> int:
    m = _require_manifest(cfg)
    provider = make_provider(cfg.detector)
    with _lock(cfg):
        summary = extract(m, provider, cfg.crop_root, cfg.frame_budget)
    print(summary.line())
    return EXIT_SKIPS if summary.skipped else EXIT_OK


def cmd_featurize(cfg: RunConfig) -> int:
    m = _require_manifest(cfg)
    get_encoder(cfg.encoder_id)
    with _lock(cfg):
        summary = featurize(m, cfg.crop_root, FeatureCache(cfg.feature_root), cfg.encoder_id, cfg.frame_budget)
    print(summary.line())
    return EXIT_SKIPS if summary.skipped else EXIT_OK


def _features(cfg: RunConfig):
    m = _require_manifest(cfg)
    return load_features(m, FeatureCache(cfg.feature_root), cfg.encoder_id, cfg.frame_budget)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    tmp.replace(path)


def _loss_csv(losses) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "mean_loss"])
    for i, v in enumerate(losses, start=1):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()


def cmd_train(cfg: RunConfig) -> int:
    features = _features(cfg)
    train = training_data(features, cfg.protocol)
    meta = {
        "encoder_id": cfg.encoder_id,
        "protocol": cfg.protocol.to_dict(),
        "train_config": cfg.train.to_dict(),
        "features": feature_digest(train),
    }
    out = cfg.checkpoint_dir
    meta_path = out / "train.json"
    if not cfg.force and meta_path.is_file():
        try:
            old = json.loads(meta_path.read_text(encoding="utf-8"))
            if {k: old.get(k) for k in meta} == meta:
                load_checkpoint(out / "triplet.ckpt")
                load_checkpoint(out / "classifier.ckpt")
                print(f"up-to-date checkpoint={out / 'triplet.ckpt'}")
                return EXIT_OK
        except (Face2PartsError, OSError, ValueError, KeyError):
            pass

    detector = fit_detector(train, cfg.train)
    meta["triplet_crc32"] = save_checkpoint(detector.network, out / "triplet.ckpt")
    meta["classifier_crc32"] = save_checkpoint(detector.classifier, out / "classifier.ckpt")
    _write(out / "loss.csv", _loss_csv(detector.losses))
    _write(meta_path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    final = f"{detector.losses[-1]:.6g}" if detector.losses else "n/a"
    print(f"trained epochs={cfg.train.epochs} final_loss={final} checkpoint={out / 'triplet.ckpt'}")
    return EXIT_OK


def _load_detector(cfg: RunConfig) -> tuple[Detector, TrainConfig]:
    out = cfg.checkpoint_dir
    meta = json.loads((out / "train.json").read_text(encoding="utf-8"))
    train_cfg = TrainConfig.from_dict(meta["train_config"])
    net = load_checkpoint(out / "triplet.ckpt")
    clf = load_checkpoint(out / "classifier.ckpt")
    return Detector(net, clf, train_cfg.active_regions), train_cfg


def cmd_evaluate(cfg: RunConfig) -> int:
    features = _features(cfg)
    detector, train_cfg = _load_detector(cfg)
    report = evaluate(features, detector, cfg.protocol, train_cfg)
    _write(cfg.report_dir / "report.json", report.to_json())
    _write(cfg.report_dir / "report.txt", report.to_table())
    if cfg.plot:
        save_roc_plot(score_targets(features, detector, cfg.protocol), cfg.report_dir / "roc.png")
    print(" ".join(f"{name}: F-AUC={r.frame_auc:.4f} V-AUC={r.video_auc:.4f}"
                   for name, r in report.results.items()))
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    features = _features(cfg)
    if cfg.study == "levels":
        results = ablate_levels(features, cfg.train, cfg.combos, cfg.protocol)
        rows = [(combo_label(regions), rep) for regions, rep in results]
        key = "combo"
    else:
        results = margin_study(features, cfg.train, cfg.margins, cfg.protocol)
        rows = [(f"{m:g}", rep) for m, rep in results]
        key = "margin"
    name = "ablation" if cfg.study == "levels" else "margins"
    for i, (label, rep) in enumerate(rows):
        _write(cfg.report_dir / name / f"{i:02d}_{label}.json", rep.to_json())
    _write(cfg.report_dir / f"{name}.json", study_json(rows, key))
    _write(cfg.report_dir / f"{name}.txt", study_table(rows, key))
    if cfg.plot:
        save_region_bars(rows, cfg.report_dir / f"{name}.png")
    print(f"{name}: {len(rows)} reports written to {cfg.report_dir / (name + '.json')}")
    return EXIT_OK


COMMANDS = {"extract": cmd_extract, "featurize": cmd_featurize, "train": cmd_train,
            "evaluate": cmd_evaluate, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--manifest", help="JSON-lines frame manifest")
    common.add_argument("--cache", help="cache root (default from config / F2P_CACHE)")
    common.add_argument("--out", help="directory for checkpoints and reports")
    common.add_argument("--encoder", help="encoder id")
    common.add_argument("--frames", type=int, help="frames sampled per video")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--regions", help="regions or levels, e.g. 'all', '1,3', 'face,lips'")
    train.add_argument("--seed", type=int)
    train.add_argument("--margin", type=float)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--protocol", choices=["intra", "inter", "inter_manipulation"])
    train.add_argument("--dataset", help="dataset for intra / inter-manipulation protocols")
    train.add_argument("--train-on", help="comma-separated training datasets or manipulations")
    train.add_argument("--test-on", help="comma-separated test datasets or manipulations")
    train.add_argument("--force", action="store_true", help="retrain even if checkpoints are current")

    parser = argparse.ArgumentParser(prog="face2parts", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="crop the six facial regions")
    p.add_argument("--detector", help="landmark provider: 'template' or 'dlib:<model.dat>'")
    sub.add_parser("featurize", parents=[common], help="encode region crops into feature stacks")
    sub.add_parser("train", parents=[common, train], help="train triplet network and classifier")
    p = sub.add_parser("evaluate", parents=[common, train], help="frame/video AUC report")
    p.add_argument("--plot", action="store_true", help="also write an ROC curve image")
    p = sub.add_parser("ablate", parents=[common, train], help="level-combination or margin study")
    p.add_argument("--study", choices=["levels", "margins"])
    p.add_argument("--combos", help="';'-separated region subsets, e.g. '1;2;3;1,2,3'")
    p.add_argument("--plot", action="store_true", help="also write a bar chart")
    sub.add_parser("encoders", help="list registered encoders")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "encoders":
        print(" ".join(available_encoders()))
        return EXIT_OK
    try:
        cfg = load_run_config(args)
    except (OSError, ValueError, TypeError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    logging.basicConfig(level=cfg.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](cfg)
    except (Face2PartsError, OSError, ValueError, KeyError) as exc:
        log.debug("fatal", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
