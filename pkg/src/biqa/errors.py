"""Exception types raised across the toolkit.

``DataError`` subclasses describe problems with user-supplied inputs
(manifests, images, model files) and map to CLI exit code 2; anything
else escaping a command is an internal error (exit code 3).
"""


class BiqaError(Exception):
    """Base class for all toolkit errors."""


class DataError(BiqaError):
    """Bad or missing user-supplied data."""


# -- manifests ---------------------------------------------------------------

class MissingFile(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DuplicatePath(DataError):
    pass


class MosOutOfDeclaredRange(DataError):
    pass


class BadFractions(DataError):
    pass


class DegenerateSplit(DataError):
    pass


# -- images ------------------------------------------------------------------

class DecodeFailure(DataError):
    pass


class UnsupportedBitDepth(DataError):
    pass


class ImageTooSmall(DataError):
    pass


# -- feature pipeline / regression -------------------------------------------

class InsufficientSamples(DataError):
    pass


class ShapeMismatch(BiqaError):
    pass


class LengthMismatch(BiqaError):
    pass


class EmptyInput(BiqaError):
    pass


class ConstantInput(BiqaError):
    pass


class EmptyTrainingSet(DataError):
    pass


class ColumnMismatch(BiqaError):
    pass


class InsufficientData(DataError):
    pass


# -- model container ----------------------------------------------------------

class CorruptModel(DataError):
    pass


class VersionMismatch(DataError):
    pass


class IoError(DataError):
    pass
