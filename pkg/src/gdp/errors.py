"""Exception hierarchy shared across the package.

Every error raised by gdp code derives from :class:`GdpError`, so callers can
catch one base class at pipeline boundaries while tests assert on the precise
subclass.
"""


class GdpError(Exception):
    """Base class for all gdp errors."""


# --- ingestion ---------------------------------------------------------------

class SchemaError(GdpError):
    """Input file does not conform to the expected document/presentation schema."""


# --- embeddings --------------------------------------------------------------

class ProviderError(GdpError):
    """Embedding backend failed after bounded retries."""


class DimensionMismatchError(GdpError):
    """Vectors or matrices have incompatible dimensions."""


class ZeroVectorError(GdpError):
    """Cosine similarity requested for an all-zero vector."""


class EmptyInputError(GdpError):
    """An operation received an empty list where at least one item is required."""


# --- classifier --------------------------------------------------------------

class InsufficientDataError(GdpError):
    """Training data is missing one of the two classes."""


class BackendError(GdpError):
    """An LLM or model backend call failed."""


# --- graph -------------------------------------------------------------------

class EmptyGraphError(GdpError):
    """No paragraph pair cleared the edge threshold; alpha is too high."""


class CompleteGraphError(GdpError):
    """The graph has no non-edges left to sample negatives from."""


# --- clustering --------------------------------------------------------------

class TooFewNodesError(GdpError):
    """Requested more clusters than there are nodes."""


class OverlappingClustersError(GdpError):
    """Clusters passed to ordering share at least one paragraph index."""


class EmptyClusterError(GdpError):
    """A cluster passed to ordering is empty."""


# --- generation --------------------------------------------------------------

class MalformedOutputError(BackendError):
    """Backend response could not be parsed into a slide after retries."""


class GenerationAbortedError(BackendError):
    """Presentation generation aborted mid-deck; carries the partial result."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


# --- evaluation --------------------------------------------------------------

class EmptyTextError(GdpError):
    """A metric received text with no tokens."""


class EmptyUnitsError(GdpError):
    """Coverage received an empty unit list."""


class SequenceTooShortError(GdpError):
    """Non-linearity needs at least two attribution indices."""


class DuplicateIndicesError(GdpError):
    """Attribution sequence contains a repeated paragraph index."""


class ScorerUnavailableError(GdpError):
    """Perplexity scorer is not available; the metric is reported absent."""


class AllSamplesUnparseableError(GdpError):
    """No judge sample contained a parseable 0-10 score."""


# --- orchestration -----------------------------------------------------------

class ConfigError(GdpError):
    """Configuration file is invalid; message names the offending key path."""


class PipelineError(GdpError):
    """A pipeline stage failed; message names the stage."""
