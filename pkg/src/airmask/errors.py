"""Exception types shared across the toolkit."""


class AirmaskError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(AirmaskError):
    """An operation received arguments violating its preconditions."""


class FormatError(AirmaskError):
    """A file has an unsupported or corrupt encoding."""


class ConfigError(AirmaskError):
    """A run configuration is malformed or references missing keys."""


class GenerationError(AirmaskError):
    """Room jitter could not produce a valid variant within the retry budget."""


class TrainingError(AirmaskError):
    """Recognizer training diverged (non-finite loss)."""


class AttackDivergenceError(AirmaskError):
    """The attack loop hit a non-finite loss or gradient."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
