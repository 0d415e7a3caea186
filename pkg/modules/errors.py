"""
Errors Module
Exception hierarchy shared by all numerical modules
"""
from typing import Dict, Optional


class FracDiffError(Exception):
    """Base class for every error raised by the toolkit"""


class InvalidInputError(FracDiffError, ValueError):
    """Input outside the documented domain of an operation"""


class UnsupportedRegimeError(FracDiffError, ValueError):
    """Parameters not covered by any of the limit theorems"""


class ConfigError(FracDiffError, ValueError):
    """Experiment configuration that cannot be built or validated"""


class PreconditionError(FracDiffError, RuntimeError):
    """An operation was called before a required check was run"""


class NumericalFailureError(FracDiffError, RuntimeError):
    """Quadrature or linear algebra failure, with diagnostics attached"""

    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InstabilityError(NumericalFailureError):
    """Weighted norm grew during a time step"""


class ResolutionError(NumericalFailureError):
    """Discretization too coarse for the requested output"""


class StatisticsError(FracDiffError, RuntimeError):
    """Sample too small for a stable estimate"""


class KernelUnsamplableError(FracDiffError, RuntimeError):
    """Rejection sampler acceptance below the allowed floor"""
