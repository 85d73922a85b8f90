"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: ``DataError`` subclasses exit
with 3, ``NumericalError`` subclasses with 4.
"""


class OuveError(Exception):
    """Base class for all package errors."""


class DataError(OuveError, ValueError):
    """Invalid input data: bad shapes, formats, non-finite values."""


class ShapeMismatchError(DataError):
    pass


class AudioFormatError(DataError):
    pass


class WeightsFormatError(DataError):
    pass


class ManifestError(DataError):
    pass


class NumericalError(OuveError, ArithmeticError):
    """A computation produced non-finite values or could not make progress."""


class DivergenceError(NumericalError):
    def __init__(self, message, t_last_valid=None):
        super().__init__(message)
        self.t_last_valid = t_last_valid


class StepSizeUnderflowError(NumericalError):
    def __init__(self, message, t_reached=None):
        super().__init__(message)
        self.t_reached = t_reached
