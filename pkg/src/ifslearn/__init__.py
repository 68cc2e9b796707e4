"""Learning on the attractor of a copula-generated IFS with Markov-chain SGD in an RKHS."""

from .copula_core import (
    ConvergenceError,
    GridCopula,
    TransformationMatrix,
    ValidationError,
    build_ifs,
    empirical_copula,
    invariant_copula,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "GridCopula",
    "TransformationMatrix",
    "ValidationError",
    "build_ifs",
    "empirical_copula",
    "invariant_copula",
    "__version__",
]
