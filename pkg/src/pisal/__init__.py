"""Inverse problems in two-medium domains with separate field networks and a learned interface.

Subpackages and modules:

- ``autodiff``: scalar reverse-mode tape with nested derivatives
- ``network``: tanh MLPs, Xavier init, flat parameter vectors
- ``optim``: Adam and L-BFGS with a strong Wolfe line search
- ``physics``: the Stefan and Stokes benchmarks, residuals and sampling
- ``sal``: alternating interface/medium training and the single-network baseline
- ``metrics``: RMSE, correlation, percentage error, grid evaluation
- ``cli``: the ``pisal`` command
"""

from .errors import (
    ConfigurationError, DomainError, NumericError, PartitionDegenerateError, PisalError,
    TrainingError, UndefinedMetricError, UnsupportedOrderError, UsageError,
)
from .metrics import MetricsReport, cc, evaluate_model, pe, rmse
from .physics import STEFAN, STOKES, get_problem
from .sal import PinnModel, PisalModel, TrainConfig, pinn_baseline_train, sal_train

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DomainError", "NumericError", "PartitionDegenerateError", "PisalError",
    "TrainingError", "UndefinedMetricError", "UnsupportedOrderError", "UsageError",
    "MetricsReport", "cc", "evaluate_model", "pe", "rmse",
    "STEFAN", "STOKES", "get_problem",
    "PinnModel", "PisalModel", "TrainConfig", "pinn_baseline_train", "sal_train",
]
