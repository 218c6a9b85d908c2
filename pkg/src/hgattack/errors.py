"""Exception hierarchy.

Everything derived from :class:`HgAttackError` is a user-facing error (bad
input, bad parameters, infeasible requests); the CLI maps it to exit code 1.
"""


class HgAttackError(Exception):
    pass


class ShapeError(HgAttackError, ValueError):
    pass


class ParameterError(HgAttackError, ValueError):
    pass


class FormatError(HgAttackError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateError(FormatError):
    pass


class EmptyInputError(HgAttackError, ValueError):
    pass


class ConvergenceError(HgAttackError, RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class TrainingError(HgAttackError, RuntimeError):
    def __init__(self, message, epoch):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class PreconditionError(HgAttackError, ValueError):
    pass


class DegenerateInputError(HgAttackError, ValueError):
    pass


class SamplingError(HgAttackError, ValueError):
    def __init__(self, message, available):
        super().__init__(message)
        self.available = available


class UndefinedMetricError(HgAttackError, ValueError):
    pass
