"""Exception types shared across the toolkit."""


class SFFilterError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(SFFilterError):
    """Invalid parameter combination (bad step sizes, mismatched grids, ...)."""


class NumericalBlowupError(SFFilterError):
    """A state became non-finite during integration.

    Carries the step index (and particle index, where applicable) so the
    failure can be located in long runs.
    """

    def __init__(self, message, step_index=None, particle_index=None):
        super().__init__(message)
        self.step_index = step_index
        self.particle_index = particle_index


class UnsupportedModelError(SFFilterError):
    """Model shape outside what an operation supports (e.g. non-diagonal B)."""


class GridCoverageError(SFFilterError):
    """Noise grid or environment path does not cover the requested window."""


class ConvergenceError(SFFilterError):
    """Fixed-point iteration failed to converge; carries the last residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DegenerateEnsembleError(SFFilterError):
    """All particle weights vanished (or became non-finite)."""
