"""Exception hierarchy shared across the package.

The command line maps these onto exit codes, so the split matters:
bad inputs (validation, parse, numeric) are the caller's fault, while
an invariant violation means the simulator itself is broken.
"""


class FedsimError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(FedsimError, ValueError):
    """Structurally invalid argument, configuration, or data."""


class ParseError(ValidationError):
    """Malformed input file. Messages name the offending line."""


class NumericError(ValidationError):
    """Non-finite value where a finite one is required."""


class InvariantError(FedsimError, RuntimeError):
    """Internal consistency check failed; indicates a simulator bug."""
