"""Exception types shared across the package."""


class VicfuseError(Exception):
    """Base class for all vicfuse errors."""


class NonPlanarRotation(VicfuseError):
    """Pose rotation tilts the z-axis too far to preserve a yaw-only box."""


class ParseError(VicfuseError):
    """A frame file could not be parsed; message carries file and line."""


class InvariantError(VicfuseError):
    """Loaded or constructed data violates a structural invariant."""


class MalformedPayload(VicfuseError):
    """Wire payload is truncated, mislabeled, or carries invalid records."""


class NonFiniteCost(VicfuseError):
    """Assignment cost matrix contains NaN or infinite entries."""


class NotSynchronous(VicfuseError):
    """Operation requires a synchronous frame pair."""


class MissingAnnotations(VicfuseError):
    """Frame carries no ground-truth annotations."""


class MissingDetections(VicfuseError):
    """Frame carries no detections."""


class MissingCloud(VicfuseError):
    """Frame carries no point cloud."""


class NonPositiveDt(VicfuseError):
    """Velocity estimation needs a strictly positive time difference."""


class InsufficientHistory(VicfuseError):
    """Pair lacks the infrastructure history the operation needs."""


class NoGroundTruth(VicfuseError):
    """Average precision is undefined without ground truth."""


class OutOfTimeRange(VicfuseError):
    """Requested time lies outside the scenario duration."""


class ConfigError(VicfuseError):
    """Scenario or CLI configuration is invalid; message names the field."""
