"""Exception taxonomy shared across the toolkit.

Two broad families matter to callers: validation failures (bad inputs,
bad schemas, bad configuration, all the caller's fault) and transport
failures (the network or the remote endpoint gave out). The CLI maps
them to exit codes 1 and 2 respectively.
"""


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PipelineError):
    """Input, schema, or configuration problem. CLI exit code 1."""


class TransportError(PipelineError):
    """Network or endpoint exhaustion. CLI exit code 2."""


# --- transcript grammar ---

class MalformedTranscript(ValidationError):
    """A delimiter is missing, duplicated, or out of order."""


class DelimiterInPayload(ValidationError):
    """A thought or solution payload contains a delimiter literal."""


class NoAnswerFound(ValidationError):
    """The solution block is empty or whitespace-only."""


# --- corpus store ---

class SchemaViolation(ValidationError):
    """A record line does not match the documented schema."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field!r}")
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(message + suffix)
        self.message = message
        self.line = line
        self.field = field


class EmptyCorpus(ValidationError):
    """An ingested file contained no records."""


class OverlappingBands(ValidationError):
    """Length bands in a stratification overlap."""


class SampleTooLarge(ValidationError):
    """Requested sample size exceeds the corpus size."""


class MissingImage(ValidationError):
    """A visual record's image reference does not resolve to a file."""


class IoFailure(PipelineError):
    """Filesystem write failed during export."""


# --- inference client ---

class EndpointUnreachable(TransportError):
    """All retry attempts against an endpoint failed at the transport level."""


class RateLimited(TransportError):
    """The endpoint kept returning 429 after honoring Retry-After."""


class MalformedResponse(TransportError):
    """The endpoint answered, but not in the expected wire format."""


# --- distiller ---

class AllRolloutsFailedTransport(TransportError):
    """Not a single completion was obtained for a rollout set."""


class InvalidBinningArity(ValidationError):
    """Difficulty binning requires exactly five requested rollouts."""


# --- eval harness ---

class UnknownBenchmark(ValidationError):
    """A benchmark name outside the supported set."""


class MissingDifficultyAnnotations(ValidationError):
    """A difficulty breakdown was requested but no item carries a difficulty."""


class EmptyRun(ValidationError):
    """Scoring was requested on a run with no items."""
