"""Outcome-conditioned partial policy effects with high-dimensional controls."""

__version__ = "0.1.0"

from .basis import Basis, BasisSpec, expand_basis, expand_basis_ddot  # noqa: E402
from .data import Dataset, IndexU  # noqa: E402
from .errors import ConfigError, ConvergenceError, DataError, NumericalError, OcppeError  # noqa: E402
from .interventions import (  # noqa: E402
    ExpressionIntervention,
    LocationScale,
    LocationShift,
    Scale,
    TargetPerturbation,
    simulation_intervention,
    vartheta,
    vartheta_prime,
)
from .score import (  # noqa: E402
    EstimatorConfig,
    OcppeResult,
    ProcessFit,
    dist_perturbation_estimate,
    estimate_many,
    estimate_ocppe,
    naive_estimate,
)

__all__ = [
    "Basis", "BasisSpec", "ConfigError", "ConvergenceError", "DataError", "Dataset", "EstimatorConfig",
    "ExpressionIntervention", "IndexU", "LocationScale", "LocationShift", "NumericalError", "OcppeError",
    "OcppeResult", "ProcessFit", "Scale", "TargetPerturbation", "dist_perturbation_estimate",
    "estimate_many", "estimate_ocppe", "expand_basis", "expand_basis_ddot", "naive_estimate",
    "simulation_intervention", "vartheta", "vartheta_prime",
]
