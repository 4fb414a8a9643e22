"""Shared exception types."""


class TreeNlgError(Exception):
    """Base class for all package errors."""


class DimensionError(TreeNlgError):
    """Array shapes do not conform for the requested operation."""


class DomainError(TreeNlgError):
    """A value is outside the mathematical domain of an operation."""


class ContractError(TreeNlgError):
    """A caller violated an API precondition."""


class ParameterError(TreeNlgError):
    """A configuration value is out of its allowed range."""


class ParseError(TreeNlgError):
    """An input file is malformed."""


class ValidationError(TreeNlgError):
    """Data fails schema validation against the ontology."""


class ConfigError(TreeNlgError):
    """A run configuration is unusable (empty splits, zero samples, ...)."""


class LexicalizationError(TreeNlgError):
    """A placeholder token cannot be resolved against the semantic representation."""


class CompatibilityError(TreeNlgError):
    """Checkpoint and data disagree (ontology fingerprint, shapes, ...)."""


class ModeError(TreeNlgError):
    """The requested operation needs a different model mode."""
