"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`StrcgpError`.
The CLI maps the two middle layers onto exit codes (numerical failures -> 3,
input/parse failures -> 2 or 4).
"""


class StrcgpError(Exception):
    """Base class for all package errors."""


class NumericalError(StrcgpError):
    """A computation could not be carried out reliably."""


class InputError(StrcgpError, ValueError):
    """Arguments or data violate a documented precondition."""


# linear algebra
class InvalidMatrix(InputError):
    pass


class NotHurwitz(NumericalError):
    pass


class SingularMatrix(NumericalError):
    pass


class SingularInnovation(SingularMatrix):
    pass


# state-space construction
class UnsupportedKernel(InputError):
    pass


class DegenerateGrid(InputError):
    pass


class InvalidTimeStep(InputError):
    pass


# weights / generic
class InvalidShrinkage(InputError):
    pass


class InvalidInput(InputError):
    pass


# optimisation
class InvalidStart(NumericalError):
    pass


class OptimizationAborted(NumericalError):
    """Raised when the search keeps hitting non-finite objective values.

    ``result`` carries the partial :class:`~strcgp.hyperopt.FitResult`.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# data io
class ParseError(InputError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicatePoint(InputError):
    pass


class GridMismatch(InputError):
    pass
