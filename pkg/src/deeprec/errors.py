"""Exception hierarchy shared across the engine."""


class DeepRecError(Exception):
    """Base class for all domain errors raised by this package."""


class CatalogError(DeepRecError):
    """Bad items file: malformed line, duplicate title, empty catalog."""


class EmbeddingFileError(DeepRecError):
    """Bad embedding file: wrong magic, shape mismatch, zero row in cosine mode."""


class ConfigError(DeepRecError):
    """Invalid configuration value or unknown policy/provider spec."""


class RetrievalError(DeepRecError):
    """Invalid retrieval query: dim mismatch, unknown or masked target item."""


class PolicyTransportError(DeepRecError):
    """Remote policy or embedding provider could not be reached."""


class SessionError(DeepRecError):
    """Session lookup or state-machine violation in the HTTP service."""
