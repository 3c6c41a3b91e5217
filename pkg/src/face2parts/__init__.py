"""Hierarchical facial-region features and triplet learning for deepfake detection."""

__version__ = "0.1.0"

from .encoders import FeatureStack, EncoderSpec, stack_features, subset_stack
from .evaluation import EvalReport, Protocol, ablate_levels, evaluate, margin_study, run_protocol
from .manifest import FrameRecord, Manifest, frames_for_video, load_manifest, sample_frames
from .metrics import frame_auc, video_auc, video_scores
from .model import TripletNetwork, margin_ranking_loss, pairwise_distance
from .regions import REGIONS, Region
from .training import FeatureSet, TrainConfig, fit_detector, sample_triplets

__all__ = [
    "EncoderSpec", "EvalReport", "FeatureSet", "FeatureStack", "FrameRecord", "Manifest", "Protocol",
    "REGIONS", "Region", "TrainConfig", "TripletNetwork", "ablate_levels", "evaluate", "fit_detector",
    "frame_auc", "frames_for_video", "load_manifest", "margin_ranking_loss", "margin_study",
    "pairwise_distance", "run_protocol", "sample_frames", "sample_triplets", "stack_features",
    "subset_stack", "video_auc", "video_scores",
]
