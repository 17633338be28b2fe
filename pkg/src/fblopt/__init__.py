"""Finite-blocklength error model, convexity analysis and resource allocation."""
from .allocator import (
    AllocationProblem,
    AllocationResult,
    round_solution,
    solve_alternating,
    solve_integer,
    solve_joint,
    validate,
)
from .errors import (
    DomainError,
    FblError,
    InfeasibleError,
    ModelError,
    NumericalError,
    RegionError,
    ResourceError,
    UsageError,
    ValidationError,
)
from .fbl import LinkPoint, error_probability, q_func, q_inv

__version__ = "0.1.0"
