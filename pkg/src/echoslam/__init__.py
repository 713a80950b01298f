"""Echo-based indoor SLAM: chirp echoes, contrastive location features, pose graphs."""

from .exceptions import (ConfigurationError, EchoSlamError, NumericError, SolverError,
                         TrainingError)

__version__ = "0.1.0"

__all__ = ["EchoSlamError", "ConfigurationError", "NumericError", "SolverError", "TrainingError",
           "__version__"]
