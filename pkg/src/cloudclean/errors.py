"""Exception hierarchy shared across the package.

The CLI maps these onto its documented exit codes, so subcommands raise
(or let propagate) the most specific class that applies.
"""


class CloudCleanError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(CloudCleanError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class ParseError(CloudCleanError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StructuralError(CloudCleanError):
    """Structurally inconsistent data (count mismatches, bad shapes)."""


class CheckpointError(CloudCleanError):
    """Unreadable checkpoint or checkpoint/config mismatch (exit code 4)."""


class DataMismatchError(CloudCleanError):
    """Inputs that do not belong together (exit code 5)."""


class GenerationError(CloudCleanError):
    """Dataset generation cannot proceed (e.g. zero-area mesh)."""


class NumericError(CloudCleanError):
    """Non-finite values produced where finite ones are required."""


class EmptyCloudError(CloudCleanError):
    """An operation would produce or consume an empty point cloud."""
