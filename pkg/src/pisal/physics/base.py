"""Types shared by the benchmark problems."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..autodiff import GraphNode, Tape
from ..errors import DomainError

REGION1, REGION2, BAND = 1, 2, 3


class RegionTag(enum.Enum):
    REGION1 = "Region1"
    REGION2 = "Region2"
    INTERFACE_BAND = "InterfaceBand"

    @property
    def code(self) -> int:
        return {"Region1": REGION1, "Region2": REGION2, "InterfaceBand": BAND}[self.value]

    @classmethod
    def from_code(cls, code: int) -> "RegionTag":
        return {REGION1: cls.REGION1, REGION2: cls.REGION2, BAND: cls.INTERFACE_BAND}[int(code)]


@dataclass(frozen=True)
class SamplePoint:
    coords: tuple[float, ...]
    time: float | None = None

    def as_input(self) -> np.ndarray:
        extra = () if self.time is None else (self.time,)
        return np.array(tuple(self.coords) + extra, dtype=float)


@dataclass(frozen=True)
class LabeledSample:
    point: SamplePoint
    fields: tuple[float, ...]
    is_initial: bool = False


class TapeMath:
    """``numpy``-like namespace over a tape so closed forms can be reused."""

    pi = math.pi

    def __init__(self, tape: Tape):
        self.tape = tape

    def exp(self, a):
        return self.tape.exp(a)

    def cos(self, a):
        return self.tape.cos(a)

    def sin(self, a):
        return self.tape.sin(a)


# A tape field maps (tape, input nodes) to output nodes; networks and
# closed-form solutions both implement it.
TapeField = Callable[[Tape, Sequence[GraphNode]], list]


def fresh_input(tape: Tape, value: float) -> GraphNode:
    """A new uniquely named leaf, for differentiating w.r.t. a coordinate."""
    return tape.leaf(f"_in{len(tape)}", value)


class ProblemDefinition:
    """A two-medium benchmark: operators, constants, oracle and geometry.

    Network inputs are ordered as ``input_names``.  The interface is a graph
    over the coordinate ``interface_input_axis`` giving the position along
    ``normal_axis``; medium 1 lies on the side selected by ``region1_below``.
    """

    name: str
    input_names: tuple[str, ...]
    field_names: tuple[str, ...]
    spatial_dim: int
    time_dependent: bool
    bounds: np.ndarray
    normal_axis: int
    interface_input_axis: int
    region1_below: bool
    interface_offset: float
    lambda_names: tuple[str, str]
    lambda_true: tuple[float, float]
    default_hidden: dict
    n_bulk: int
    n_interface: int

    @property
    def n_in(self) -> int:
        return len(self.input_names)

    @property
    def n_fields(self) -> int:
        return len(self.field_names)

    @property
    def normal_extent(self) -> float:
        lo, hi = self.bounds[self.normal_axis]
        return float(hi - lo)

    @property
    def default_eps(self) -> float:
        return 0.02 * self.normal_extent

    def check_in_domain(self, Z, tol: float = 1e-12) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        if np.any(Z < lo - tol) or np.any(Z > hi + tol) or not np.all(np.isfinite(Z)):
            raise DomainError(f"point outside {self.name} domain {self.bounds.tolist()}")
        return Z

    def true_interface(self, s) -> np.ndarray:
        raise NotImplementedError

    def true_regions(self, Z) -> np.ndarray:
        """Region codes by the true interface; points on it go to Region1."""
        Z = np.atleast_2d(Z)
        gamma = self.true_interface(Z[:, self.interface_input_axis])
        c = Z[:, self.normal_axis]
        in1 = c <= gamma if self.region1_below else c >= gamma
        return np.where(in1, REGION1, REGION2)

    def exact(self, Z) -> tuple[np.ndarray, np.ndarray]:
        """Exact fields ``(N, m)`` and true region codes for inputs ``(N, n_in)``."""
        Z = self.check_in_domain(Z)
        regions = self.true_regions(Z)
        out = np.empty((Z.shape[0], self.n_fields))
        for r in (REGION1, REGION2):
            mask = regions == r
            if mask.any():
                out[mask] = self.exact_region(Z[mask], r)
        return out, regions

    def exact_region(self, Z, region: int) -> np.ndarray:
        """Closed form of medium ``region`` extended to any input (numpy)."""
        return np.stack(self.closed_form(np, Z.T, region), axis=-1)

    def closed_form(self, xp, coords, region):
        raise NotImplementedError

    def sample_box(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + (hi - lo) * rng.random((n, self.n_in))

    def sample_initial(self, rng: np.random.Generator, n: int) -> np.ndarray:
        Z = self.sample_box(rng, n)
        if self.time_dependent:
            Z[:, -1] = self.bounds[-1, 0]
        return Z
