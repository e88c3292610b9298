class DocError(Exception):
    """Base class for solver and model errors."""


class InvalidStateError(DocError, ValueError):
    pass


class ScheduleError(DocError, ValueError):
    pass


class DivergenceError(DocError, RuntimeError):
    def __init__(self, message, t=None, iteration=None):
        super().__init__(message)
        self.t = t
        self.iteration = iteration


class IllConditionedError(DocError, ArithmeticError):
    pass


class DegenerateLikelihoodError(DocError, ValueError):
    pass


class ConfigError(DocError, ValueError):
    pass
