"""Exception hierarchy shared across the package."""


class NasError(Exception):
    """Base class for every error raised by llmnas."""


# -- architecture grammar / spaces ------------------------------------------

class ArchError(NasError, ValueError):
    pass


class MalformedString(ArchError):
    pass


class UnknownOp(ArchError):
    pass


class WrongSourceIndex(ArchError):
    pass


class IndexOutOfRange(ArchError, IndexError):
    pass


class VariantMismatch(ArchError):
    pass


class UnsupportedSpace(ArchError):
    pass


# -- benchmark tables --------------------------------------------------------

class DataError(NasError):
    pass


class ParseError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateArch(DataError):
    pass


class IncompleteTable(DataError):
    pass


class MissingEntry(DataError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


# -- search ------------------------------------------------------------------

class BudgetExhausted(NasError):
    pass


class EmptyInput(NasError, ValueError):
    pass


class ConfigError(NasError, ValueError):
    pass


# -- LLM backends --------------------------------------------------------------

class BackendError(NasError):
    pass


class Timeout(BackendError):
    pass


class HttpError(BackendError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class MalformedResponse(BackendError):
    pass


class ScriptExhausted(BackendError):
    pass


class EmptyStrategy(NasError):
    pass


class NoValidCandidates(NasError):
    def __init__(self, message: str, invalid=()):
        super().__init__(message)
        self.invalid = list(invalid)


# -- ranking -------------------------------------------------------------------

class LengthMismatch(NasError, ValueError):
    pass


class NotAPermutation(NasError, ValueError):
    pass


class UnparseableRanking(NasError):
    pass
