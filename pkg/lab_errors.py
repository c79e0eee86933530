"""
Exception hierarchy for the homogenization lab.
Configuration problems map to exit code 2, numerical failures to exit code 3.
"""

from typing import Optional


class LabError(Exception):
    """Base class for every error raised by the lab"""
    exit_code = 1


class ConfigError(LabError, ValueError):
    """Invalid configuration or argument"""
    exit_code = 2


class NumericalError(LabError, RuntimeError):
    """A computation could not be completed or certified"""
    exit_code = 3


class CertificationError(NumericalError):
    """An enumeration bound is too small to certify a geometric query"""


class EllipticityError(NumericalError):
    """Coefficient eigenvalue fell below the ellipticity floor"""


class ResolutionError(NumericalError):
    """Grid or quadrature resolution is insufficient"""


class GridAlignmentError(NumericalError):
    """A sub-box does not fall on grid nodes"""


class ConvergenceError(NumericalError):
    """Iterative solver did not reach the requested tolerance"""

    def __init__(self, message: str, best_residual: Optional[float] = None, iterations: int = 0):
        super().__init__(message)
        self.best_residual = best_residual
        self.iterations = iterations
