"""Benchmark problems: a two-phase Stefan problem and a coupled Stokes flow."""

from ..errors import ConfigurationError
from .base import BAND, REGION1, REGION2, LabeledSample, ProblemDefinition, RegionTag, SamplePoint
from .dataset import Dataset, sample_dataset
from .stefan import STEFAN, StefanProblem, stefan_exact, stefan_residual_bulk, stefan_residual_interface
from .stokes import (
    STOKES, StokesProblem, ns_exact, ns_residual_bulk, ns_residual_interface, ns_source,
)

__all__ = [
    "BAND", "REGION1", "REGION2", "LabeledSample", "ProblemDefinition", "RegionTag", "SamplePoint",
    "Dataset", "sample_dataset",
    "STEFAN", "StefanProblem", "stefan_exact", "stefan_residual_bulk", "stefan_residual_interface",
    "STOKES", "StokesProblem", "ns_exact", "ns_residual_bulk", "ns_residual_interface", "ns_source",
    "PROBLEMS", "get_problem",
]

PROBLEMS = {"stefan": StefanProblem, "stokes": StokesProblem}


def get_problem(name: str, **options) -> ProblemDefinition:
    try:
        cls = PROBLEMS[name]
    except KeyError:
        raise ConfigurationError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return cls(**options)
