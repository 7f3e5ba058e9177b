"""Exception types shared across the package."""


class VisKnowError(Exception):
    """Base class for all errors raised by this package."""


class EmptyLabel(VisKnowError):
    pass


class KindConflict(VisKnowError):
    pass


class DanglingReference(VisKnowError):
    pass


class UnknownRoot(VisKnowError):
    pass


class UnknownCategory(VisKnowError):
    pass


class UnknownId(VisKnowError):
    pass


class IoFailure(VisKnowError):
    pass


class UnsupportedVersion(VisKnowError):
    pass


class CorruptRecord(VisKnowError):
    def __init__(self, message, file=None, line=None):
        super().__init__(message)
        self.file = file
        self.line = line


class ParseError(VisKnowError):
    pass


class EmptyDocument(VisKnowError):
    pass


class ProviderUnavailable(VisKnowError):
    def __init__(self, message, attempts=None):
        super().__init__(message)
        self.attempts = attempts


class ProviderMalformed(VisKnowError):
    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class UnparseableAnswer(VisKnowError):
    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class CyclicTemplate(VisKnowError):
    pass


class EmptyMask(VisKnowError):
    pass


class UnknownPartLabel(VisKnowError):
    pass


class DimensionMismatch(VisKnowError):
    pass


class GoldMissing(VisKnowError):
    pass


class EmptyAfterFilter(VisKnowError):
    pass


class InsufficientImages(VisKnowError):
    pass


class LengthMismatch(VisKnowError):
    pass


class ConstraintViolation(VisKnowError):
    pass


class VocabMismatch(VisKnowError):
    pass


class AlreadyDecided(VisKnowError):
    pass


class UnknownItem(VisKnowError):
    pass


class InvalidEdit(VisKnowError):
    pass


class MissingPrerequisite(VisKnowError):
    pass


class StageLocked(VisKnowError):
    pass
