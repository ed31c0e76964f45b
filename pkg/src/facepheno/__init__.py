"""Facial-behavior day features and depressive-episode models from phone face streams."""

__version__ = "0.1.0"

from .errors import DataError, FormatError, InvariantError

__all__ = ["DataError", "FormatError", "InvariantError", "__version__"]
