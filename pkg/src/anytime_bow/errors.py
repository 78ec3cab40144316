"""Exception types shared across the package."""


class BowError(Exception):
    """Base class for all package errors."""


class FormatError(BowError):
    def __init__(self, offset, reason):
        self.offset = offset
        self.reason = reason
        super().__init__(f"bad file format at byte {offset}: {reason}")


class DimensionMismatch(BowError, ValueError):
    def __init__(self, expected, found):
        self.expected = expected
        self.found = found
        super().__init__(f"expected dimension {expected}, found {found}")


class InvalidConfig(BowError, ValueError):
    pass


class WordOutOfRange(BowError, IndexError):
    def __init__(self, word, size):
        self.word = word
        self.size = size
        super().__init__(f"word id {word} outside vocabulary of size {size}")


class InconsistentState(BowError):
    pass


class EmptyQuery(BowError, ValueError):
    pass


class MissingGroundTruth(BowError, KeyError):
    def __init__(self, query_id):
        self.query_id = query_id
        super().__init__(f"no ground truth entry for query {query_id}")
