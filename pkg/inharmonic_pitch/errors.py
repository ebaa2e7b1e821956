"""Exceptions raised by the inharmonic_pitch package"""
# Standard
from typing import Optional


class InharmonicPitchError(Exception):
    """Base class for all package errors"""


class SignalValueError(InharmonicPitchError, ValueError):
    """A signal or model parameter violates its invariants"""


class ConditioningError(InharmonicPitchError):
    """The Fourier atom matrix is too ill-conditioned for a least squares fit

    Parameters
    ----------
    message : str
        Human readable description.
    rcond : float
        Reciprocal condition number of A^H A that triggered the error.
    """

    def __init__(self, message: str, rcond: float):
        super().__init__(message)
        self.rcond = rcond


class EstimationError(InharmonicPitchError):
    """An estimator could not produce an estimate

    Parameters
    ----------
    message : str
        Human readable description.
    diagnostics : Optional[object]
        The estimator's Diagnostics record at the point of failure, if any.
    """

    def __init__(self, message: str, diagnostics: Optional[object] = None):
        super().__init__(message)
        self.diagnostics = diagnostics


class BoundComputationError(InharmonicPitchError):
    """A Fisher-type matrix could not be inverted"""

    def __init__(self, message: str, rcond: float):
        super().__init__(message)
        self.rcond = rcond


class TransportError(InharmonicPitchError, ValueError):
    """Two spectra cannot be compared by optimal transport"""


class ConfigError(InharmonicPitchError, ValueError):
    """Malformed experiment configuration or command line arguments"""
