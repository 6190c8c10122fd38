"""Shared exception types."""


class MrgenError(Exception):
    """Base class for all package errors."""


class ParseError(MrgenError):
    """Malformed input text (bad row, unbalanced brackets, missing field)."""


class ValidationError(MrgenError):
    """Structurally valid input that violates a data invariant."""


class SchemaError(ValidationError):
    """A slot name that does not belong to the active schema."""
