"""Exception hierarchy shared by all modules."""


class RVRecoveryError(Exception):
    """Base class for every error raised by this package."""


class DomainError(RVRecoveryError, ValueError):
    """Input outside the domain of a model (non-finite values, singular steering...)."""


class SimulationBlowup(RVRecoveryError):
    """Integrated state diverged beyond the configured bound."""


class IllConditionedData(RVRecoveryError):
    """Regression data cannot identify the requested parameters."""


class MissingBootstrap(RVRecoveryError):
    """A sensor stream has no fresh sample to hold before alignment starts."""


class NumericalDegeneracy(RVRecoveryError):
    """A matrix that must be inverted is singular."""


class IncompleteHistory(RVRecoveryError):
    """Logged controls do not cover the requested interval."""


class InsufficientData(RVRecoveryError):
    """Not enough calibration samples."""


class NoSafeHistory(RVRecoveryError):
    """An alert arrived before any attack-free window was committed."""


class CalibrationFailure(RVRecoveryError):
    """Calibration ensemble violates a precondition (e.g. an undetected attack)."""


class NonStabilizable(RVRecoveryError):
    """The Riccati iteration did not converge."""


class DegenerateEnsemble(RVRecoveryError):
    """Min-max normalisation over an ensemble whose extremes coincide."""


class NoBaseline(RVRecoveryError):
    """Mission delay requested without enough attack-free completions."""


class ConfigError(RVRecoveryError, ValueError):
    """Malformed scenario, campaign or calibration configuration."""

    def __init__(self, message, keys=()):
        self.keys = tuple(keys)
        if self.keys:
            message = f"{message}: {', '.join(self.keys)}"
        super().__init__(message)
