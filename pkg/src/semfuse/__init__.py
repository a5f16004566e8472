"""Probabilistic camera-lidar semantic fusion into a voxel map."""
from .errors import (BehindCamera, ConfigError, DataError, EmptyStream, InvalidK, MismatchedLength, NotPSD,
                     SemfuseError, StageError)

__all__ = ["BehindCamera", "ConfigError", "DataError", "EmptyStream", "InvalidK", "MismatchedLength", "NotPSD",
           "SemfuseError", "StageError"]
__version__ = "0.1.0"
