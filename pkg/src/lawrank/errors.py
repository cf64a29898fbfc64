"""Shared exception types."""


class DataError(Exception):
    """An input file or data structure violates its contract."""
