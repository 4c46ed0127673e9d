"""Shared exception types."""


class DivedError(Exception):
    """Base class for all errors raised by this package."""
