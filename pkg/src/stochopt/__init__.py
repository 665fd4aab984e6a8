"""Stochastic optimization for kernel SVMs and streaming PCA."""
from .errors import (ContractViolation, DegenerateError, InfeasibleError, LabelError,
                     NonConvergenceError, ParseError, StochoptError, UnsupportedVersionError)
from .data import (Dataset, DualState, KernelOracle, KernelSpec, load_libsvm, parse_libsvm,
                   write_libsvm)
from .spectral import EigState

__version__ = "0.1.0"

__all__ = [
    "ContractViolation", "DegenerateError", "InfeasibleError", "LabelError",
    "NonConvergenceError", "ParseError", "StochoptError", "UnsupportedVersionError",
    "Dataset", "DualState", "KernelOracle", "KernelSpec", "load_libsvm", "parse_libsvm",
    "write_libsvm", "EigState",
]
