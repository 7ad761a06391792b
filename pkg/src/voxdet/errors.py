"""Shared exception types; the CLI maps them to exit codes."""


class VoxdetError(Exception):
    """Base class for all errors raised by this package."""


class InputError(VoxdetError):
    """Malformed or out-of-contract input (CLI exit code 2)."""


class InternalError(VoxdetError):
    """Invariant violation inside the library (CLI exit code 3)."""
