"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented exit statuses without a lookup table.
"""


class EchoSlamError(Exception):
    exit_code = 3


class ConfigurationError(EchoSlamError, ValueError):
    exit_code = 2


class LengthError(EchoSlamError, ValueError):
    pass


class ShapeError(EchoSlamError, ValueError):
    pass


class GeometryError(EchoSlamError, ValueError):
    pass


class SequenceError(EchoSlamError, ValueError):
    pass


class ArgumentError(EchoSlamError, ValueError):
    pass


class PairingError(EchoSlamError, ValueError):
    pass


class SamplingError(EchoSlamError, ValueError):
    pass


class NumericError(EchoSlamError, FloatingPointError):
    exit_code = 4


class TrainingError(EchoSlamError, RuntimeError):
    exit_code = 4

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SolverError(EchoSlamError, RuntimeError):
    exit_code = 4
