"""Exception types shared across the toolkit."""


class RockgenError(Exception):
    """Base class for all rockgen errors."""


class NonBinaryVolumeError(RockgenError, ValueError):
    """An operation requiring a binary volume received a continuous one."""


class DegenerateNormalizationError(RockgenError, ValueError):
    """Porosity is 0 or 1, so the correlation normalization phi - phi^2 vanishes."""


class FitError(RockgenError, RuntimeError):
    """Nonlinear least-squares fit failed; carries the final residual if known."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DatasetFormatError(RockgenError, ValueError):
    """Dataset directory is corrupt, incomplete, or from an unknown format version."""


class PercolationError(RockgenError, ValueError):
    """The pore phase does not percolate along the requested flow axis."""


class TrainingDivergedError(RockgenError, RuntimeError):
    """A loss became non-finite; a diagnostic checkpoint was written first."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class ConfigError(RockgenError, ValueError):
    """Experiment configuration failed validation."""
