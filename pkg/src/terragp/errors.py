"""Exception hierarchy shared across the toolkit.

Command-line entry points map these onto process exit codes:
config/usage problems exit 2, data/parse problems exit 3, and
numerical failures exit 4.
"""


class TerraGpError(Exception):
    """Base class for all toolkit errors."""


class InvalidConfigError(TerraGpError):
    """A configuration value is out of range or inconsistent."""


class InvalidInputError(TerraGpError):
    """Input data violates a precondition (non-finite, nonpositive, ...)."""


class DataFormatError(TerraGpError):
    """A file could not be parsed or grids disagree on geometry."""


class EmptyDatasetError(DataFormatError):
    """No usable samples remain after masking nodata cells."""


class IllConditionedKernelError(TerraGpError):
    """Cholesky factorization failed even at the jitter ceiling."""


class TrainingDivergedError(TerraGpError):
    """A loss or gradient became non-finite during optimization."""
