"""Exception types shared across the pipeline.

The CLI maps these onto its exit-code contract: usage errors exit 1,
DataError exits 2, NumericalError exits 3.
"""


class DataError(ValueError):
    """Unreadable, malformed, or inconsistent input data."""


class NumericalError(RuntimeError):
    """A numeric computation produced non-finite or unusable values."""
