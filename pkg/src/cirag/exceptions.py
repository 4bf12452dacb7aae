"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class CiragError(Exception):
    """Base class for every error raised by the engine."""


class CorpusError(CiragError):
    """Malformed corpus record or invalid document."""


class DuplicateDocumentError(CorpusError):
    def __init__(self, doc_id: str, first_line: int, second_line: int):
        self.doc_id = doc_id
        self.first_line = first_line
        self.second_line = second_line
        super().__init__(
            f"duplicate document id {doc_id!r} at lines {first_line} and {second_line}"
        )


class RetrievalError(CiragError):
    pass


class EmptyQueryError(RetrievalError):
    def __init__(self, query: str = ""):
        self.query = query
        super().__init__("empty query")


class ParseError(CiragError):
    """An LLM response could not be parsed. Carries the raw text."""

    def __init__(self, message: str, raw: str):
        self.raw = raw
        super().__init__(message)


class ExtractionError(ParseError):
    pass


class IntegrationParseError(ParseError):
    pass


class BackendError(CiragError):
    pass


class TransportError(BackendError):
    pass


class ScriptError(BackendError):
    """Replay backend has no rule for a request, or required rules went unused."""


class EmbeddingUnavailableError(BackendError):
    pass


class PipelineError(CiragError):
    """A question's run aborted. ``partial`` holds whatever state was built."""

    def __init__(self, message: str, partial=None, cause: BaseException | None = None):
        self.partial = partial
        self.cause = cause
        super().__init__(message)


class DatasetFormatError(CiragError):
    def __init__(self, message: str, path: str):
        self.path = path
        super().__init__(f"{message} (at {path})")
