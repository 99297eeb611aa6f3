"""Exception hierarchy shared by every module of the package."""


class NNMError(Exception):
    """Base class for all errors raised by :mod:`nnmid`."""


class ParameterError(NNMError, ValueError):
    """Invalid user-supplied parameter (empty band, bad range, ...)."""


class AssemblyError(NNMError):
    """Finite-element assembly produced an unusable model."""


class UnsupportedDampingError(NNMError):
    """Operation requires proportional damping but the model has none."""


class IntegrationError(NNMError):
    """Time integration failed.

    Attributes
    ----------
    step : int or None
        Index of the failing time step (Newmark) when known.
    time : float or None
        Simulation time at failure (adaptive integrators).
    """

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class DataError(NNMError):
    """Measurement data inconsistent with the requested processing."""


class OrderTooHighError(NNMError):
    """Requested model order exceeds the numerical rank of the data."""


class NodeOfModeError(NNMError):
    """Driving point sits on (or near) a node of the mode to be scaled."""


class ConfigurationError(NNMError):
    """Configuration inconsistent with the data or model (bad DOF, path...)."""


class ConvergenceError(NNMError):
    """Newton-type corrector failed to converge."""


class ComparisonError(NNMError):
    """Two curves cannot be compared (no overlap, mismatched pairing)."""


class NumericalWarning(UserWarning):
    """A computation succeeded but with poor conditioning or skipped lines."""
