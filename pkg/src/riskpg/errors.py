"""Exception hierarchy shared by every module.

Each class carries an ``exit_code`` used by the CLI when it turns a failure
into a machine-readable error record.
"""


class RiskPGError(Exception):
    exit_code = 1


class ArgumentError(RiskPGError, ValueError):
    exit_code = 2


class ConfigurationError(RiskPGError, ValueError):
    exit_code = 3


class ParseError(RiskPGError, ValueError):
    exit_code = 4


class CapacityError(RiskPGError):
    exit_code = 5


class InfeasibleThresholdError(RiskPGError, ValueError):
    exit_code = 6


class RangeError(RiskPGError, OverflowError):
    exit_code = 7


class OracleError(RiskPGError):
    exit_code = 8


class EstimatorError(RiskPGError):
    """Raised when an estimator fails inside a training run."""

    exit_code = 9

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class OutputError(RiskPGError):
    """Unreadable input or an output path that already exists."""

    exit_code = 10
