"""Exception types shared across the package."""


class ImpactorError(Exception):
    """Base class for all package errors."""


class PanelFormatError(ImpactorError):
    """Malformed or inconsistent panel input data."""


class ModelSpecError(ImpactorError):
    """Invalid model specification (insufficient data, covariate mismatch...)."""


class MatchingError(ImpactorError):
    """No usable covariate candidate for a target series."""


class NonConvergenceError(ImpactorError):
    """Sampling failed to converge within the retry budget.

    Carries the diagnostics of the last attempt in ``diagnostics``.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConfigError(ImpactorError):
    """Invalid run configuration or CLI input."""
