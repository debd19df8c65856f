"""Error types; exit codes mirror the evaluation toolkit's convention."""


class ExtractError(Exception):
    exit_code = 3


class UsageError(ExtractError):
    """Bad arguments or configuration."""

    exit_code = 2


class InputError(ExtractError):
    """Unreadable or malformed input (images, texts, embedding files)."""


class ModelLoadError(ExtractError):
    """The requested encoder could not be resolved or loaded."""
