"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: DataError -> 2, NumericError -> 3,
anything argparse-level -> 1.
"""


class FoliosegError(Exception):
    """Base class for all toolkit errors."""


class DataError(FoliosegError):
    """Malformed or inconsistent input data (files, manifests, masks)."""


class NumericError(FoliosegError):
    """Numeric failure during training or inference (NaN/Inf, divergence)."""
