"""Exception taxonomy shared by every module.

The CLI maps these onto process exit codes (usage=1, data/state=2,
numeric=3) and the HTTP service maps them onto status codes, so new
error conditions should reuse one of the classes below instead of
raising bare ValueError/RuntimeError.
"""


class ShapeXploreError(Exception):
    """Base class for all package errors."""


class UsageError(ShapeXploreError):
    """Bad command line or API usage."""


class ArgumentError(ShapeXploreError):
    """An argument violates a documented precondition (shape, range, bounds)."""


class ConfigError(ShapeXploreError):
    """Invalid or inconsistent configuration."""


class DataError(ShapeXploreError):
    """Malformed input data (unknown token, bad manifest record, bad payload)."""


class FormatError(DataError):
    """A binary/text file failed validation (magic, version, truncation)."""


class StateError(ShapeXploreError):
    """Operation called in the wrong lifecycle state (unfrozen model, stale tape,
    missing prerequisite stage)."""


class NumericError(ShapeXploreError):
    """Non-finite values encountered during optimization or inference."""
