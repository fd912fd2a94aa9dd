"""Exception types shared across the package."""

from __future__ import annotations


class RecAgentError(Exception):
    """Base class for all package-specific errors."""


class IngestError(RecAgentError):
    """A catalog input file is malformed; the message names the offending line."""


class PolicyError(RecAgentError):
    """A SQL query violated the read-only guard (distinct from a syntax error
    so the reflection critic can name the cause)."""


class SqlSyntaxError(RecAgentError):
    """The SQL engine rejected an otherwise guard-passing query."""


class InputError(RecAgentError):
    """A model operation received invalid input (e.g. an empty seed list)."""


class ToolError(RecAgentError):
    """A tool could not execute its input. Carried in tool-call records and
    surfaced to reflection; never allowed to escape plan execution."""


class ProviderError(RecAgentError):
    """A chat/embedding provider failed after retries, or a script ran dry."""


class MissingPlaceholder(RecAgentError):
    """A prompt template was rendered without all of its placeholders."""

    def __init__(self, names: list[str]):
        self.names = list(names)
        super().__init__(f"missing placeholders: {', '.join(self.names)}")


class PlanParseError(RecAgentError):
    """The planner reply matched neither plan grammar. Keeps the raw text so
    reflection can feed it back to the actor."""

    def __init__(self, raw_text: str):
        self.raw_text = raw_text
        super().__init__(f"could not parse a plan from reply: {raw_text[:200]!r}")


class TurnError(RecAgentError):
    """A conversational turn failed in a way the caller must handle
    (typically an underlying provider failure)."""


class SessionBusy(TurnError):
    """A turn was requested while another one is in flight for the session."""


class ModelCacheError(RecAgentError):
    """A similarity-model cache file is unreadable or does not match the
    catalog it is being loaded for."""


class ConfigError(RecAgentError):
    """Service configuration is invalid or incomplete at startup."""
