"""Exception hierarchy shared by all modules.

Library code raises these; main.py maps them onto process exit codes.
"""


class CatheterError(Exception):
    exit_code = 1


class ValidationError(CatheterError, ValueError):
    exit_code = 1


class InvalidParams(ValidationError):
    pass


class InvalidTension(ValidationError):
    pass


class DegenerateLayout(ValidationError):
    pass


class SingularCompliance(ValidationError):
    pass


class AngleOutOfRange(ValidationError):
    pass


class ConfigurationOutOfRange(ValidationError):
    pass


class DegenerateProbe(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ControlError(CatheterError):
    exit_code = 2


class Infeasible(ControlError):
    pass


class MaxIterationsExceeded(ControlError):
    pass


class ToleranceNotMet(ControlError):
    pass


class OutputError(CatheterError):
    exit_code = 3


class NonConvergence(CatheterError):
    exit_code = 4

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = list(records or [])
