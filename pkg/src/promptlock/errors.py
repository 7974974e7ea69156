"""Exception hierarchy shared by every module."""

from __future__ import annotations


class PromptLockError(Exception):
    """Base class for all domain errors raised by this package."""


class InvalidConfig(PromptLockError):
    pass


class InvalidArtifact(PromptLockError):
    pass


class EmptyText(PromptLockError, ValueError):
    pass


class EmptyAlphabet(PromptLockError, ValueError):
    pass


class LengthMismatch(PromptLockError, ValueError):
    pass


class EmptyLabels(PromptLockError, ValueError):
    pass


class MissingReference(PromptLockError):
    pass


class MissingChoices(MissingReference):
    pass


class DatasetEmpty(PromptLockError):
    pass


class MissingBinding(PromptLockError, KeyError):
    pass


class UnknownPlaceholder(PromptLockError, KeyError):
    pass


class EmptyResponse(PromptLockError):
    pass


class BackendError(PromptLockError):
    """Anything that went wrong while talking to a backend."""


class TransportError(BackendError):
    """Retryable failure (connection problems, timeouts, 429, 5xx)."""


class ProviderRefusal(BackendError):
    """Non-retryable rejection by the provider."""


class LogprobsUnsupported(BackendError):
    """The backend cannot return label log-probabilities; use token-only mode."""


class UnknownBackend(PromptLockError, KeyError):
    pass


class CorruptCheckpoint(PromptLockError):
    pass


class CorruptTrace(PromptLockError):
    pass


class ConfigMismatch(PromptLockError):
    pass


class ShapeMismatch(PromptLockError, ValueError):
    pass


class KeyMismatch(PromptLockError, ValueError):
    pass


class ZeroBaseline(PromptLockError, ZeroDivisionError):
    pass


class EvaluationFailed(PromptLockError):
    pass
