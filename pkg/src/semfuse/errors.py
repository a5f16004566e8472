"""Exception types shared across the pipeline stages."""


class SemfuseError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(SemfuseError):
    """Invalid or incomplete configuration / calibration input."""


class DataError(SemfuseError):
    """Input data that cannot be processed (corrupt file, inconsistent shapes)."""


class BehindCamera(SemfuseError):
    """A point with z <= 0 in the camera frame was passed to the projection."""


class InvalidK(SemfuseError):
    """Requested superpixel count exceeds the number of pixels."""


class NotPSD(SemfuseError):
    """Covariance could not be Cholesky-factored even after jitter."""


class EmptyStream(SemfuseError):
    """Velocity lookup on an empty stream."""


class MismatchedLength(SemfuseError):
    """Prediction and ground truth sequences have different lengths."""


class StageError(DataError):
    """Failure inside a pipeline stage, tagged with scan / packet provenance."""

    def __init__(self, stage, message, scan=None, packet=None):
        self.stage = stage
        self.scan = scan
        self.packet = packet
        where = [f"stage={stage}"]
        if scan is not None:
            where.append(f"scan={scan}")
        if packet is not None:
            where.append(f"packet={packet}")
        super().__init__(f"[{' '.join(where)}] {message}")
