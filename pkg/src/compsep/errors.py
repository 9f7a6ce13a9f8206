"""Exception hierarchy shared by all modules."""


class CompsepError(Exception):
    """Base class for package errors."""


class InputError(CompsepError, ValueError):
    """Malformed or non-finite input (shape mismatch, NaN entries, ...)."""


class ParameterError(CompsepError, ValueError):
    """A parameter lies outside its admissible range."""


class NumericalError(CompsepError, ArithmeticError):
    """An iterative routine failed to converge.

    ``estimate`` carries the last iterate's value so callers can still use it.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class DefinitenessError(CompsepError, ArithmeticError):
    """Matrix expected to be symmetric positive definite is not."""


class ConstructionError(CompsepError, ValueError):
    """A synthetic problem cannot be built with the requested constants."""


class PartitionError(CompsepError, ValueError):
    """Not enough data rows to realise a requested split."""


class ModeError(CompsepError, ValueError):
    """Operation requested in a mode the inputs do not support."""


class ProtocolError(CompsepError, RuntimeError):
    """Gradient request inconsistent with the communication round type."""
