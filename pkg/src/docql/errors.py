"""Exception types shared across the engine.

Every error that callers are expected to branch on gets its own class;
anything else surfaces as a plain DocqlError with a message.
"""


class DocqlError(Exception):
    """Base class for all engine errors."""


class DuplicateId(DocqlError):
    """Two documents share the same doc_id."""


class EmptyDocument(DocqlError):
    """A document record carries no text."""


class UnknownCorpus(DocqlError):
    """A table references a corpus that is not loaded."""


class InvalidSchema(DocqlError):
    """A table definition violates schema rules (e.g. zero attributes)."""


class CorpusFormatError(DocqlError):
    """A corpus or catalog file is malformed; message names the line."""


class ParseError(DocqlError):
    """Query text could not be parsed; carries the offending position."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class UnknownSymbol(ParseError):
    """Query references a table or attribute that does not exist."""


class QueryTypeError(ParseError):
    """Literal type does not match the attribute's declared dtype."""


class DimMismatch(DocqlError):
    """Vector dimensionality differs from the index's dimensionality."""


class CalibrationFailed(DocqlError):
    """Threshold calibration had no relevant samples to work with."""


class EvidenceUnavailable(DocqlError):
    """Evidence could not be collected or synthesized for an attribute."""


class ProviderError(DocqlError):
    """Extraction provider failed after retries; retryable at a higher level."""


class EmptyJoinInput(DocqlError):
    """Join transformation received an empty driving-side value set."""


class PlannerError(DocqlError):
    """Query cannot be planned (e.g. disconnected join graph)."""


class BudgetExceeded(DocqlError):
    """The session's token budget was exhausted mid-query."""


class ValidationError(DocqlError):
    """Configuration or workload parameters are out of range."""
