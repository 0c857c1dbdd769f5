"""Error measures and test-grid evaluation of trained models."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .errors import UndefinedMetricError, UsageError
from .physics.base import REGION1, REGION2

GRID_SHAPES = {"stefan": (201, 101), "stokes": (101, 201)}
INTERFACE_POINTS = 201
STEFAN_SLICES = (0.3, 0.5, 0.7)


def _pair(pred, truth):
    a = np.asarray(pred, dtype=float).ravel()
    b = np.asarray(truth, dtype=float).ravel()
    if a.shape != b.shape:
        raise UsageError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise UsageError("empty input")
    return a, b


def rmse(pred, truth) -> float:
    a, b = _pair(pred, truth)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def cc(pred, truth) -> float:
    """Pearson correlation with population (1/N) moments."""
    a, b = _pair(pred, truth)
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.mean(da * da)), np.sqrt(np.mean(db * db))
    if sa == 0.0 or sb == 0.0:
        raise UndefinedMetricError("correlation is undefined for a constant series")
    return float(np.clip(np.mean(da * db) / (sa * sb), -1.0, 1.0))


def pe(estimate: float, truth: float) -> float:
    """Percentage error |estimate - truth| / |truth| * 100."""
    if truth == 0:
        raise UndefinedMetricError("percentage error needs a nonzero true value")
    return float(abs(estimate - truth) / abs(truth) * 100.0)


def grid_points(problem, shape=None) -> np.ndarray:
    """Uniform test grid, first input varying slowest."""
    shape = shape or GRID_SHAPES[problem.name]
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(problem.bounds, shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def interface_grid(problem, n=INTERFACE_POINTS) -> np.ndarray:
    lo, hi = problem.bounds[problem.interface_input_axis]
    return np.linspace(lo, hi, n)


@dataclass
class MetricsReport:
    problem: str
    grid: dict
    rmse: dict
    cc: dict
    lambdas: dict
    pe: dict
    rmse_interface: float | None = None
    max_interface_deviation: float | None = None
    slices: dict = field(default_factory=dict)

    @property
    def pe_lambda1(self):
        return self.pe["lambda1"]

    @property
    def pe_lambda2(self):
        return self.pe["lambda2"]

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["pe_lambda1"] = self.pe_lambda1
        doc["pe_lambda2"] = self.pe_lambda2
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _field_errors(problem, pred, truth, regions):
    out_rmse, out_cc = {}, {}
    for j, name in enumerate(problem.field_names):
        per = {"all": rmse(pred[:, j], truth[:, j])}
        for r, key in ((REGION1, "region1"), (REGION2, "region2")):
            mask = regions == r
            per[key] = rmse(pred[mask, j], truth[mask, j]) if mask.any() else None
        out_rmse[name] = per
        try:
            out_cc[name] = cc(pred[:, j], truth[:, j])
        except UndefinedMetricError:
            out_cc[name] = None
    return out_rmse, out_cc


def predict_on_grid(model, problem, Z):
    """Predicted and exact fields with true region codes; each point uses its true medium."""
    truth, regions = problem.exact(Z)
    pred = model.predict(problem, Z, regions)
    return pred, truth, regions


def evaluate_model(model, problem, shape=None, n_interface=INTERFACE_POINTS) -> MetricsReport:
    """Field, coefficient and interface errors of a trained model on uniform grids."""
    Z = grid_points(problem, shape)
    pred, truth, regions = predict_on_grid(model, problem, Z)
    field_rmse, field_cc = _field_errors(problem, pred, truth, regions)

    if hasattr(model, "lambda1"):
        lams = {"lambda1": float(model.lambda1), "lambda2": float(model.lambda2)}
    else:
        lams = {"lambda1": float(model.lam), "lambda2": float(model.lam)}
    pes = {k: pe(v, problem.lambda_true[i]) for i, (k, v) in enumerate(lams.items())}

    report = MetricsReport(
        problem=problem.name,
        grid={
            "shape": list(shape or GRID_SHAPES[problem.name]),
            "n_points": int(Z.shape[0]),
            "interface_points": int(n_interface),
        },
        rmse=field_rmse,
        cc=field_cc,
        lambdas=lams,
        pe=pes,
    )
    if hasattr(model, "netI"):
        s = interface_grid(problem, n_interface)
        est, true = model.interface(problem, s), problem.true_interface(s)
        report.rmse_interface = rmse(est, true)
        report.max_interface_deviation = float(np.max(np.abs(est - true)))
    if problem.time_dependent:
        nx = (shape or GRID_SHAPES[problem.name])[0]
        x = np.linspace(*problem.bounds[0], nx)
        for t in STEFAN_SLICES:
            Zt = np.stack([x, np.full_like(x, t)], axis=1)
            p, u, reg = predict_on_grid(model, problem, Zt)
            report.slices[f"t={t}"] = {
                name: rmse(p[:, j], u[:, j]) for j, name in enumerate(problem.field_names)
            }
    return report


def field_error(model, problem, shape=None) -> float:
    """Whole-grid RMSE over all fields, a scalar progress measure."""
    Z = grid_points(problem, shape)
    pred, truth, _ = predict_on_grid(model, problem, Z)
    return rmse(pred, truth)


def loss_error_correlation(losses, errors) -> float | None:
    """Spearman rank correlation of training loss against test error over iterations.

    None when there are fewer than three iterates or either series is constant.
    """
    losses, errors = _pair(losses, errors)
    if losses.size < 3 or np.ptp(losses) == 0 or np.ptp(errors) == 0:
        return None
    return float(spearmanr(losses, errors).statistic)
