"""Exception hierarchy shared across the toolkit.

Configuration and file-format problems map to CLI exit code 2, numerical
failures to exit code 3.
"""


class NlsidError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(NlsidError):
    """Invalid configuration (bad band, inconsistent sizes, ...)."""


class FormatError(NlsidError):
    """Malformed input file (missing columns, ragged rows, jitter, ...)."""


class InsufficientDataError(NlsidError):
    """Not enough data for the requested estimate (e.g. P < 2 periods)."""


class NumericalError(NlsidError):
    """A numerical procedure failed to produce a usable result."""


class InstabilityError(NumericalError):
    """State recursion diverged.

    Carries the sample index at which the divergence guard tripped.
    """

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"state norm exceeded bound at sample {step}")
