"""Exception hierarchy shared by every stage of the pipeline."""


class Face2PartsError(Exception):
    """Base class for all pipeline errors."""


# manifest ------------------------------------------------------------------

class ManifestError(Face2PartsError):
    pass


class MalformedRecord(ManifestError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}" if reason else f"line {line_no}")


class SplitLeak(ManifestError):
    def __init__(self, video_id):
        self.video_id = video_id
        super().__init__(f"video {video_id!r} appears in both train and test")


class MissingClass(ManifestError):
    def __init__(self, split, label=None):
        self.split = split
        self.label = label
        msg = f"split {split!r} lacks label {label}" if label is not None else f"split {split!r}"
        super().__init__(msg)


class UnknownVideo(ManifestError, KeyError):
    def __init__(self, video_id):
        self.video_id = video_id
        super().__init__(video_id)

    def __str__(self):
        return f"unknown video {self.video_id!r}"


# regions -------------------------------------------------------------------

class RegionError(Face2PartsError):
    pass


class NoFaceDetected(RegionError):
    pass


class ImageUnreadable(RegionError):
    pass


class DegenerateRegion(RegionError):
    def __init__(self, region):
        self.region = region
        super().__init__(f"degenerate box for region {region}")


class NonFiniteInput(RegionError, ValueError):
    pass


# encoders / stacks / cache -------------------------------------------------

class EncoderError(Face2PartsError):
    pass


class ShapeMismatch(EncoderError, ValueError):
    pass


class BackendFailure(EncoderError):
    pass


class UnknownEncoder(EncoderError, KeyError):
    def __str__(self):
        return f"encoder {self.args[0]!r} is not registered"


class MissingRegion(EncoderError):
    def __init__(self, region):
        self.region = region
        super().__init__(f"missing region {region}")


class DimensionMismatch(EncoderError, ValueError):
    pass


class EmptySubset(EncoderError, ValueError):
    pass


class UnknownRegion(EncoderError, KeyError):
    pass


class CacheError(Face2PartsError):
    pass


class CacheCorrupt(CacheError):
    def __init__(self, key, reason="checksum mismatch"):
        self.key = key
        super().__init__(f"{key}: {reason}")


class KeyNotFound(CacheError, KeyError):
    pass


# model ---------------------------------------------------------------------

class ModelError(Face2PartsError):
    pass


class RowCountMismatch(ModelError, ValueError):
    pass


class WidthMismatch(ModelError, ValueError):
    pass


class LengthMismatch(ModelError, ValueError):
    pass


class NegativeDistance(ModelError, ValueError):
    pass


class CheckpointCorrupt(ModelError):
    pass


# training / evaluation -----------------------------------------------------

class TrainingError(Face2PartsError):
    pass


class InsufficientClassSamples(TrainingError):
    def __init__(self, label):
        self.label = label
        name = {0: "real", 1: "fake"}.get(label, label)
        super().__init__(f"need at least 2 {name} samples in the training split")


class NonFiniteLoss(TrainingError):
    pass


class SingleClassTrainingSet(TrainingError):
    pass


class SingleClassEval(Face2PartsError, ValueError):
    pass


class EmptyVideo(Face2PartsError, ValueError):
    pass


class ProtocolDataMissing(Face2PartsError):
    pass
