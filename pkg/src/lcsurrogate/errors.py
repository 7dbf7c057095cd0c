"""Exception hierarchy.

Two families matter to callers: :class:`DataError` for bad inputs or
inconsistent datasets, :class:`NumericalError` for solver failures. The CLI
maps them to exit codes 3 and 4.
"""


class LcSurrogateError(Exception):
    pass


class DataError(LcSurrogateError, ValueError):
    pass


class NumericalError(LcSurrogateError, ArithmeticError):
    pass


class ZeroTrace(NumericalError):
    pass


class NonPhysical(DataError):
    pass


class OutOfRange(DataError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, state=None, iterations=None):
        super().__init__(message)
        self.state = state
        self.iterations = iterations


class BadGridSize(DataError):
    pass


class SizeMismatch(DataError):
    pass


class BadSize(DataError):
    pass


class BadSizes(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class DuplicateCenters(DataError):
    pass


class SingularSystem(NumericalError):
    pass


class OutOfDomain(DataError):
    pass


class IncompleteGrid(DataError):
    pass


class EmptySpace(DataError):
    pass


class ZeroProbability(NumericalError):
    pass


class ArchitectureTooSmall(DataError):
    pass
