"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ValidationError -> 2,
CheckpointError (and plain OSError) -> 3, NonFiniteError -> 4.
"""


class RcpMergeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RcpMergeError):
    """A precondition or configuration invariant was violated."""


class CheckpointError(RcpMergeError):
    """A checkpoint file is malformed, truncated, or unwritable."""


class NonFiniteError(RcpMergeError):
    """A NaN or Inf was encountered where finite values are required."""
