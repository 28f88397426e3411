"""Exception hierarchy shared by every module."""


class SolitonLabError(Exception):
    """Base class. The CLI maps subclasses to exit codes."""

    exit_code = 2


class NumericalFailure(SolitonLabError):
    exit_code = 2


class ConfigError(SolitonLabError):
    exit_code = 3


class StepTooLarge(NumericalFailure):
    pass


class WindowViolation(NumericalFailure):
    pass


class OverflowGuard(NumericalFailure):
    pass


class DomainError(NumericalFailure):
    pass


class NoConvergence(NumericalFailure):
    pass


class SingularLinearization(NumericalFailure):
    pass


class ConsistencyViolation(NumericalFailure):
    pass


class DegeneratePairing(NumericalFailure):
    pass


class ProjectionFailure(NumericalFailure):
    pass


class SingularA(NumericalFailure):
    pass


class SeparationTooSmall(NumericalFailure):
    pass


class InteractionWindowTooLong(NumericalFailure):
    pass


class SpeedViolation(NumericalFailure):
    pass


class SchemaError(ConfigError):
    pass


class MissingRequired(ConfigError):
    pass
