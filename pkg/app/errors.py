"""
Exception hierarchy shared by the services, the CLI and the HTTP API.

ConfigError subclasses describe bad inputs (CLI exit code 2, HTTP 422).
NumericalError subclasses describe numerical failures on valid inputs
(CLI exit code 3, HTTP 409).
"""


class TrackingError(Exception):
    """Base class for all domain errors"""

    exit_code = 1
    http_status = 400


class ConfigError(TrackingError):
    exit_code = 2
    http_status = 422


class NumericalError(TrackingError):
    exit_code = 3
    http_status = 409


class MissingParameter(ConfigError):
    pass


class NonPositiveParameter(ConfigError):
    pass


class FellerViolation(ConfigError):
    pass


class InvalidHorizon(ConfigError):
    pass


class UnsupportedPair(ConfigError):
    pass


class ExpiredContract(ConfigError):
    pass


class InsufficientQuotes(ConfigError):
    pass


class DegenerateMaturities(ConfigError):
    pass


class OutOfCalendar(ConfigError):
    pass


class IoError(ConfigError):
    pass


class SingularSystem(NumericalError):
    pass


class InconsistentTarget(NumericalError):
    """Raised when a user-supplied drift violates the tracking condition"""


class FitDiverged(NumericalError):
    pass


class BankruptPath(NumericalError):
    pass


class NonPositiveState(NumericalError):
    """Raised when a simulated state leaves the positive orthant"""
