"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so raising the right class matters:
ConfigError -> 2, DataError -> 3, PipelineError (and anything else) -> 4.
"""


class TTCastError(Exception):
    """Base class for all package errors."""


class ConfigError(TTCastError):
    """Invalid or unusable run configuration."""


class DataError(TTCastError):
    """Input data violates a precondition (unparseable, too short, malformed)."""


class PipelineError(TTCastError):
    """A pipeline stage cannot run (missing upstream artifact, broken state)."""
