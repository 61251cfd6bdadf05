"""Exception hierarchy shared by every nndm module."""


class NNDMError(Exception):
    """Base class for all errors raised by nndm."""


class InvalidParameterError(NNDMError, ValueError):
    """A parameter is outside its admissible range (e.g. k > n)."""


class InvalidDataError(NNDMError, ValueError):
    """Input data is malformed: non-finite entries, wrong shape, one class only."""


class DegenerateDataError(InvalidDataError):
    """Data has zero variance or a singular covariance where one is required."""


class NumericalError(NNDMError, ArithmeticError):
    """A factorization failed, typically a matrix that should be PD is not."""


class UnsupportedError(NNDMError, NotImplementedError):
    """The operation is not defined for the given configuration (e.g. p != 1)."""


class CVFailureError(NNDMError, RuntimeError):
    """Every cross-validation candidate produced a non-finite score."""


class ModelFormatError(NNDMError, ValueError):
    """A serialized model could not be parsed.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ModelVersionError(ModelFormatError):
    """A serialized model was written by a newer, unsupported format version."""
