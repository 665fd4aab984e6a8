"""Exception hierarchy shared by every solver."""


class StochoptError(Exception):
    """Base class for all package errors."""


class ContractViolation(StochoptError, ValueError):
    """A precondition on the arguments was not met."""


class ParseError(StochoptError, ValueError):
    """Malformed input text.  ``line`` or ``offset`` locate the problem."""

    def __init__(self, message, line=None, offset=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte offset {offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class LabelError(ParseError):
    """A label other than +1/-1 was found."""


class UnsupportedVersionError(StochoptError):
    pass


class DegenerateError(StochoptError, ArithmeticError):
    """The computation has no meaningful answer for this input
    (zero kernel diagonal, non-positive water level, all-zero spectrum...)."""


class InfeasibleError(StochoptError, ValueError):
    pass


class NonConvergenceError(StochoptError, RuntimeError):
    def __init__(self, message, best_value=None, iterations=None):
        super().__init__(message)
        self.best_value = best_value
        self.iterations = iterations
