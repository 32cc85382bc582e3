"""Exception types shared across the package."""


class SurplusError(Exception):
    """Base class for all package errors."""


class SchemaError(SurplusError, ValueError):
    """Input data does not match the expected layout or value domain."""


class DomainError(SurplusError, ValueError):
    """A parameter or query lies outside its admissible domain."""


class DegenerateDataError(SurplusError):
    """Data are too thin or too degenerate for the requested fit."""


class InvariantViolation(SurplusError, AssertionError):
    """An internal invariant failed; indicates a bug rather than bad input."""
