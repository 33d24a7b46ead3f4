"""Exception hierarchy for graphqa.

Every error raised by the library derives from GraphQAError so callers can
catch one base class at the CLI boundary and map it to an exit code.
"""


class GraphQAError(Exception):
    """Base class for all graphqa errors."""


class InvalidArgumentError(GraphQAError, ValueError):
    """A caller violated an operation precondition."""


class NotFoundError(GraphQAError, KeyError):
    """An id lookup failed (entity, relation, chunk)."""

    def __str__(self) -> str:  # KeyError quotes its message; keep it readable
        return self.args[0] if self.args else ""


class ConfigError(GraphQAError):
    """Invalid or inconsistent configuration, detected before any side effect."""


class CorruptStoreError(GraphQAError):
    """A persisted store file failed to load; carries the offending path."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(message)
        self.path = path


class CorruptTraceError(GraphQAError):
    """A trace file failed to parse; carries the offending line number."""

    def __init__(self, message: str, line: int = 0):
        super().__init__(message)
        self.line = line


class ChunkingError(GraphQAError):
    """A document could not be chunked; carries the doc_id."""

    def __init__(self, message: str, doc_id: str = ""):
        super().__init__(message)
        self.doc_id = doc_id


class BuildError(GraphQAError):
    """Index construction failed."""


class LLMError(GraphQAError):
    """A chat-completion backend failed after exhausting its retry policy."""


class FixtureError(GraphQAError):
    """The scripted backend's transcript was exhausted or mismatched."""


class RetrievalError(GraphQAError):
    """A retrieval call failed (e.g. remote embedding provider down)."""
