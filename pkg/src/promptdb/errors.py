"""Exception hierarchy.

Every failure raised by the library derives from :class:`PromptDBError`, so
callers (the CLI, the service) can map data errors to a single handler.
"""

from __future__ import annotations


class PromptDBError(Exception):
    """Base class for all library errors."""

    def __str__(self) -> str:
        detail = super().__str__()
        name = type(self).__name__
        return f"{name}: {detail}" if detail else name


# ingestion / storage
class MalformedLine(PromptDBError):
    pass


class MissingField(PromptDBError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


class InvalidField(PromptDBError):
    def __init__(self, name: str, reason: str):
        super().__init__(f"{name}: {reason}")
        self.name = name


class BadLanguageCode(PromptDBError):
    pass


class DimensionMismatch(PromptDBError):
    def __init__(self, field: str, got: int, want: int):
        super().__init__(f"{field}: got {got}, want {want}")
        self.field = field
        self.got = got
        self.want = want


class NormOutOfRange(PromptDBError):
    def __init__(self, field: str, norm: float | None = None):
        msg = field if norm is None else f"{field}: norm {norm:.6g}"
        super().__init__(msg)
        self.field = field


class DuplicateId(PromptDBError):
    def __init__(self, record_id: str):
        super().__init__(record_id)
        self.record_id = record_id


class EmptyDatabase(PromptDBError):
    pass


class HeaderMismatch(PromptDBError):
    pass


class TruncatedStore(PromptDBError):
    pass


class IoFailure(PromptDBError):
    pass


# metrics
class ZeroVector(PromptDBError):
    pass


class NonpositiveReference(PromptDBError):
    pass


class EmptyReference(PromptDBError):
    pass


class BadThreshold(PromptDBError):
    pass


# audio features
class UnsupportedFormat(PromptDBError):
    pass


class CorruptHeader(PromptDBError):
    pass


class TooShort(PromptDBError):
    pass


# annotation
class NoModalities(PromptDBError):
    pass


class NoOutputs(PromptDBError):
    pass


class UnweightedAgent(PromptDBError):
    def __init__(self, agent_id: str):
        super().__init__(agent_id)
        self.agent_id = agent_id


class OutOfRange(PromptDBError):
    pass


class NothingToDescribe(PromptDBError):
    pass


# unseen languages
class UnknownLanguage(PromptDBError):
    pass


class NoCandidates(PromptDBError):
    pass


class NoProxyRecords(PromptDBError):
    pass


class OracleFailure(PromptDBError):
    pass


class BadInput(PromptDBError):
    pass


# registration / selection
class BadQuery(PromptDBError):
    pass


class NoFaceVectors(PromptDBError):
    pass


class MissingQueryFeature(PromptDBError):
    def __init__(self, kind: str):
        super().__init__(kind)
        self.kind = kind


class EmptySubset(PromptDBError):
    pass


class UnmeasuredStage(PromptDBError):
    def __init__(self, kind: str):
        super().__init__(kind)
        self.kind = kind


class BadSpec(PromptDBError):
    pass
