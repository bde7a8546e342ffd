"""Exception hierarchy.

Everything raised on purpose by the package derives from :class:`QEnvelopError`
so the command line can map domain failures to exit code 1 and parse/I-O
failures to exit code 2.
"""


class QEnvelopError(Exception):
    """Base class for all package errors."""


class UnknownLabelError(QEnvelopError, LookupError):
    """A command or outcome label is not part of the model."""

    def __str__(self):
        # LookupError would otherwise repr() the message
        return str(self.args[0]) if self.args else ""


class ShapeError(QEnvelopError, ValueError):
    """Array dimensions do not agree."""


class DomainError(QEnvelopError, ValueError):
    """A label set is not contained in the one it must be contained in."""


class ParameterError(QEnvelopError, ValueError):
    """A numeric parameter lies outside its admissible range."""


class ModelInvariantError(QEnvelopError, ValueError):
    """A model violates a numeric invariant (norm, completeness, ...)."""


class ValidationError(ModelInvariantError):
    """Raised when an operation requires a valid model and gets an invalid one."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConditioningError(QEnvelopError, ValueError):
    """Conditioning on an event of zero probability."""


class CompositionError(QEnvelopError, ValueError):
    """Two envelopment maps cannot be composed."""


class PreconditionError(QEnvelopError, ValueError):
    """An operation's stated precondition does not hold."""


class InsufficientDataError(QEnvelopError, ValueError):
    """Not enough recorded trials to compute the requested statistic."""


class PolicyError(QEnvelopError, ValueError):
    """A schedule or feedback policy produced a command outside the model."""


class UnsupportedModelError(QEnvelopError, TypeError):
    """The model was not built by the routine that is asked to interpret it."""


class ParseError(QEnvelopError, ValueError):
    """A file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
