"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CoopRagError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(CoopRagError, ValueError):
    """A domain object was constructed with values that break its invariants."""


class ChainInvariantViolation(ValidationError):
    """A reasoning chain has a misplaced, missing or duplicated FILL slot."""


# embedding store / index


class EmptyText(CoopRagError, ValueError):
    pass


class ProviderUnavailable(CoopRagError):
    """The encoder backend could not produce hidden states."""


class LayerOutOfRange(CoopRagError, IndexError):
    pass


class DimMismatch(CoopRagError, ValueError):
    pass


class FormatError(CoopRagError):
    """Binary file has a bad magic number, version or layout."""


class TruncatedFile(FormatError):
    pass


class EmptyStore(CoopRagError, ValueError):
    pass


class ZeroVector(CoopRagError, ValueError):
    pass


class UnknownDocId(CoopRagError, KeyError):
    pass


class BadBucketCount(CoopRagError, ValueError):
    pass


# LLM-facing stages


class ParseError(CoopRagError, ValueError):
    """LLM output does not follow the expected grammar."""


class UnrollChainError(ParseError, ChainInvariantViolation):
    """Unrolling output parsed, but the chain breaks the FILL rules."""


class EmptyQuestion(CoopRagError, ValueError):
    pass


class IncompleteChain(CoopRagError):
    """Mask slots survived reasoning-chain completion."""


class AnswerDelimiterMissing(ParseError):
    pass


class IterationLimitExceeded(CoopRagError):
    pass


class GatewayError(CoopRagError):
    """Chat completion failed after exhausting retries."""


class FixtureMissing(GatewayError):
    pass


class AuthError(GatewayError):
    pass


class BadResponse(GatewayError):
    pass


# training / evaluation


class NonPositiveTemperature(CoopRagError, ValueError):
    pass


class IndexOutOfRange(CoopRagError, IndexError):
    pass


class EmptyGold(CoopRagError, ValueError):
    pass


class SchemaError(CoopRagError, ValueError):
    def __init__(self, path, problems: list[tuple[int, str]]):
        self.path = str(path)
        self.problems = problems
        lines = "; ".join(f"line {n}: {msg}" for n, msg in problems)
        super().__init__(f"{self.path}: {lines}")


class MissingExample(CoopRagError, KeyError):
    pass


class StageError(CoopRagError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
