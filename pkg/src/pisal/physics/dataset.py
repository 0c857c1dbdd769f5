"""Labelled measurements D and collocation points E, with CSV round-trip."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, UsageError
from ..network import substream
from .base import LabeledSample, SamplePoint


@dataclass(frozen=True)
class Dataset:
    Z: np.ndarray  # (N, n_in) inputs
    U: np.ndarray  # (N, m) observed fields
    is_initial: np.ndarray  # (N,) bool

    def __len__(self):
        return self.Z.shape[0]

    def samples(self, time_dependent: bool) -> list[LabeledSample]:
        return [
            LabeledSample(_point(z, time_dependent), tuple(u), bool(b))
            for z, u, b in zip(self.Z, self.U, self.is_initial)
        ]


def _point(z, time_dependent):
    if time_dependent:
        return SamplePoint(tuple(float(c) for c in z[:-1]), float(z[-1]))
    return SamplePoint(tuple(float(c) for c in z))


def points(E: np.ndarray, time_dependent: bool) -> list[SamplePoint]:
    return [_point(z, time_dependent) for z in E]


def label(problem, Z, is_initial=None) -> Dataset:
    U, _ = problem.exact(Z)
    flags = np.zeros(len(Z), dtype=bool) if is_initial is None else np.asarray(is_initial, bool)
    return Dataset(np.asarray(Z, dtype=float), U, flags)


def sample_dataset(problem, n_u, n_f, n_initial=0, seed=0, rng_d=None, rng_e=None):
    """Uniform measurements (``n_initial`` of them at t = t_min) and collocation points.

    Labels come from the exact solution.  Generators default to the
    ``sample/D`` and ``sample/E`` sub-streams of ``seed``; passing them in
    lets a caller keep drawing fresh sets from the same streams.
    """
    if not 0 <= n_initial <= n_u:
        raise ConfigurationError(f"need 0 <= n_initial <= N_u, got {n_initial}, {n_u}")
    if n_initial and not problem.time_dependent:
        raise ConfigurationError(f"{problem.name} is stationary; n_initial must be 0")
    if n_f < 0:
        raise ConfigurationError("N_f must be non-negative")
    rng_d = rng_d if rng_d is not None else substream(seed, "sample/D")
    rng_e = rng_e if rng_e is not None else substream(seed, "sample/E")
    Z0 = problem.sample_initial(rng_d, n_initial)
    Z1 = problem.sample_box(rng_d, n_u - n_initial)
    Z = np.vstack([Z0, Z1])
    flags = np.arange(n_u) < n_initial
    return label(problem, Z, flags), problem.sample_box(rng_e, n_f)


def _fmt(v):
    return f"{float(v):.17g}"


def write_dataset_csv(path, problem, data: Dataset) -> None:
    m = data.U.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*problem.input_names, *(f"field_{j}" for j in range(m)), "is_initial"])
        for z, u, b in zip(data.Z, data.U, data.is_initial):
            w.writerow([*map(_fmt, z), *map(_fmt, u), int(b)])


def write_points_csv(path, problem, E) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(problem.input_names)
        for z in E:
            w.writerow([_fmt(c) for c in z])


def read_dataset_csv(path, problem) -> Dataset:
    rows = list(csv.reader(Path(path).read_text().splitlines()))
    header, body = rows[0], rows[1:]
    n = problem.n_in
    if tuple(header[:n]) != tuple(problem.input_names) or header[-1] != "is_initial":
        raise UsageError(f"unexpected header {header}")
    arr = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    return Dataset(arr[:, :n], arr[:, n:-1], arr[:, -1].astype(bool))


def read_points_csv(path, problem) -> np.ndarray:
    rows = list(csv.reader(Path(path).read_text().splitlines()))
    if tuple(rows[0]) != tuple(problem.input_names):
        raise UsageError(f"unexpected header {rows[0]}")
    return np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, problem.n_in)
