"""Exception hierarchy shared by every stage of the pipeline."""


class MmqsError(Exception):
    """Base class for all package errors."""


class ConfigError(MmqsError):
    pass


# -- backends ---------------------------------------------------------------

class EmptyInput(MmqsError, ValueError):
    pass


class InvalidRequest(MmqsError, ValueError):
    pass


class BackendUnavailable(MmqsError):
    """The backend could not produce a result (network, HTTP or retry exhaustion)."""

    def __init__(self, message, attempts=None):
        super().__init__(message)
        self.attempts = attempts


class RateLimited(BackendUnavailable):
    pass


class NoFixtureMatch(MmqsError):
    pass


class DimensionMismatch(MmqsError, ValueError):
    pass


class UnsupportedFormat(MmqsError, ValueError):
    pass


class ZeroVector(MmqsError, ValueError):
    pass


# -- dataset ----------------------------------------------------------------

class ValidationError(MmqsError):
    """A dataset record failed validation.

    ``location`` is the record id when known, otherwise ``line N`` / ``row N``.
    """

    def __init__(self, message, location=None):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class ParseError(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


class MissingField(ValidationError):
    def __init__(self, name, location=None):
        super().__init__(f"missing required field {name!r}", location)
        self.field = name


class ImageMissing(ValidationError):
    pass


class CategoryMismatch(ValidationError):
    pass


class EmptyDataset(MmqsError, ValueError):
    pass


# -- pipeline stages ----------------------------------------------------------

class ContextsMissing(MmqsError):
    pass


class EmptyPromptSet(MmqsError, ValueError):
    pass


class EmptyQuery(MmqsError, ValueError):
    pass


class EmptyCompletion(MmqsError):
    pass


# -- metrics ------------------------------------------------------------------

class EmptyReference(MmqsError, ValueError):
    pass


class EmptyCandidate(MmqsError, ValueError):
    pass


class MissingAnnotations(MmqsError):
    pass


class EmptyReferenceFacts(MmqsError, ValueError):
    pass


class IdMismatch(ValidationError):
    pass


class MissingGoldSummary(ValidationError):
    pass
