class BiloopError(Exception):
    """Base class for errors raised by biloop."""


class ContractError(BiloopError, ValueError):
    """An argument violates a documented precondition (shape, sign, range)."""


class ParameterError(BiloopError, ValueError):
    """Invalid problem or algorithm parameters."""


class SingularMatrixError(BiloopError, ArithmeticError):
    """A factorization met a non-positive pivot."""


class DivergenceError(BiloopError, ArithmeticError):
    """An iterate became non-finite.

    ``step`` is the inner/linear-system step index and ``iteration`` the
    outer iteration, whichever is known.
    """

    def __init__(self, message, *, step=None, iteration=None):
        super().__init__(message)
        self.step = step
        self.iteration = iteration


class ConvergenceError(BiloopError, RuntimeError):
    """A reference computation did not reach its tolerance within the cap."""


class ConfigError(BiloopError, ValueError):
    """Malformed or inconsistent experiment configuration."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field
