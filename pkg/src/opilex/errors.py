"""Exception hierarchy.

``DataError`` subclasses describe problems with the data being processed and map
to exit code 2 in the CLI; ``ValidationError`` covers bad configuration or
arguments and maps to exit code 1.
"""


class OpilexError(Exception):
    pass


class ValidationError(OpilexError):
    pass


class DataError(OpilexError):
    pass


class MalformedRecord(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class EmptyQuery(ValidationError):
    pass


class InvalidMatrix(DataError):
    pass


class DegenerateVocabulary(DataError):
    pass


class UnknownTerm(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ZeroVector(DataError):
    pass


class CorruptModel(DataError):
    pass


class VersionMismatch(DataError):
    pass


class NoSeedsInVocabulary(DataError):
    pass


class MalformedReviewFile(DataError):
    pass


class DuplicateTermAssignment(DataError):
    pass


class NoTermsAccepted(DataError):
    pass


class ZeroSeedVolume(DataError):
    pass


class EmptyRange(DataError):
    pass


class SameCategory(ValidationError):
    pass


class DegenerateTable(DataError):
    pass


class CorruptCache(DataError):
    pass
