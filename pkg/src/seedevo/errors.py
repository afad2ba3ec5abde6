"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1,
corrupt persisted state exits 3, anything else unexpected exits 2.
"""


class SeedevoError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(SeedevoError):
    """A config value is missing, malformed, or inconsistent."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class EvaluationError(SeedevoError):
    """A score comparison was attempted on non-finite input."""


class MaterializationError(SeedevoError):
    """A run workspace could not be prepared."""


class ArchiveError(SeedevoError):
    """A run could not be archived, or an archive reference is invalid."""


class CorruptStateError(SeedevoError):
    """Persisted run state exists but cannot be trusted.

    Distinct from "nothing saved yet": loaders return None for a missing
    checkpoint and raise this only when a file is present but unreadable
    or structurally wrong.
    """
