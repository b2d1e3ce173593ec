"""Exception types raised across the package."""

import numpy as np


class ConfigError(ValueError):
    """Invalid simulation or experiment configuration."""


class DegenerateInputError(ValueError):
    """Input has no usable structure (all-zero channel, empty nullspace projection, ...)."""


class NumericError(np.linalg.LinAlgError):
    """A covariance or information matrix failed a positive-definiteness check."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class RankDeficiencyError(NumericError):
    """Prior-free estimation attempted with a singular Gram matrix."""
