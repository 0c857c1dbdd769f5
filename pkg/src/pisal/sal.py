"""Three-network model, the six loss terms, the band partition and the
alternating outer loop, plus a single-network baseline.

The outer loop alternates two blocks:

* the interface network alone, on the interface data and interface
  residual terms, after which every point is re-assigned to medium 1,
  medium 2 or the band around the predicted interface;
* for each medium separately, its network and coefficient on that medium's
  data and bulk residual terms, by one L-BFGS run over both together
  (``lambda_update="adam"`` alternates L-BFGS on the weights with Adam on
  the coefficient instead).

A block update is kept only if it lowers the loss it was optimizing.
Batched losses are evaluated with JAX jets; ``loss_terms_on_tape`` builds
the same quantities on the scalar tape as an independent check.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import jax
import numpy as np

from .autodiff import Tape
from .errors import (
    ConfigurationError, NumericError, PartitionDegenerateError, TrainingError,
)
from .jet import jnp, net_field
from .network import Mlp, flatten, forward_on_tape, from_json, init_xavier, substream, to_json, unflatten
from .optim import AdamState, LbfgsState, adam_step, lbfgs_minimize
from .physics.base import BAND, REGION1, REGION2, RegionTag, SamplePoint
from .physics.dataset import Dataset, sample_dataset

LOG_HEADER = (
    "k,mse_dm_u1,mse_dm_u2,mse_dm_i,mse_pm_u1,mse_pm_u2,mse_pm_i,"
    "lambda1,lambda2,n_d1,n_d2,n_di,n_e1,n_e2,n_ei,seconds"
).split(",")

TERM_NAMES = ("mse_dm_u1", "mse_dm_u2", "mse_dm_i", "mse_pm_u1", "mse_pm_u2", "mse_pm_i")

# Stefan trains well from the plain initialization; Stokes needs the data
# pre-fit, without which its coefficients drift early on, and more outer
# iterations for the small viscosity to settle
PROBLEM_DEFAULTS = {
    "stefan": {"n_u": 220, "n_f": 2000, "n_initial": 20, "pretrain_iters": 0, "adam_warmup": 0},
    "stokes": {"n_u": 1000, "n_f": 1000, "n_initial": 0, "k_max": 40, "data_balance": "fields"},
}


# --------------------------------------------------------------------- config


@dataclass(frozen=True)
class TrainConfig:
    k_max: int = 20
    delta_train: float = 1e-5
    n_u: int = 220
    n_f: int = 2000
    n_initial: int = 20
    eps_interface: float | None = None  # None: 2% of the normal extent
    band_data: str = "own_side"  # "own_side" or "both"
    data_balance: str = "none"  # "none" or "fields"
    lbfgs_interface_iters: int = 300
    lbfgs_field_iters: int = 1000
    lambda_update: str = "joint"  # "joint" or "adam"
    rounds: int = 50
    adam_steps: int = 1
    adam_lr: float = 2e-2
    lbfgs_mem: int = 50
    pretrain_iters: int = 2000
    adam_warmup: int = 2000
    lambda_init: float = 1.0
    seed: int = 0
    net1_hidden: tuple | None = None
    net2_hidden: tuple | None = None
    netI_hidden: tuple | None = None
    anchor: bool = True
    max_resample: int = 10
    log_wallclock: bool = False

    @classmethod
    def for_problem(cls, problem, **overrides) -> "TrainConfig":
        base = dict(PROBLEM_DEFAULTS.get(problem.name, {}))
        base.update(overrides)
        return cls(**base)

    def validate(self) -> "TrainConfig":
        budgets = ("k_max", "lbfgs_interface_iters", "lbfgs_field_iters", "adam_steps", "rounds", "n_u")
        for name in budgets:
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not self.delta_train > 0:
            raise ConfigurationError("delta_train must be positive")
        if self.eps_interface is not None and not self.eps_interface > 0:
            raise ConfigurationError("eps_interface must be positive")
        if not 0 <= self.n_initial <= self.n_u or self.n_f < 1:
            raise ConfigurationError("need 0 <= n_initial <= n_u and n_f >= 1")
        if self.pretrain_iters < 0 or self.adam_warmup < 0 or self.lbfgs_mem < 1:
            raise ConfigurationError("pretrain_iters and adam_warmup must be >= 0, lbfgs_mem >= 1")
        if self.band_data not in ("own_side", "both"):
            raise ConfigurationError("band_data must be 'own_side' or 'both'")
        if self.data_balance not in ("none", "fields"):
            raise ConfigurationError("data_balance must be 'none' or 'fields'")
        if self.lambda_update not in ("joint", "adam"):
            raise ConfigurationError("lambda_update must be 'joint' or 'adam'")
        if self.lambda_update == "adam" and self.rounds > self.lbfgs_field_iters:
            raise ConfigurationError("rounds cannot exceed lbfgs_field_iters")
        if not self.adam_lr > 0 or self.max_resample < 0:
            raise ConfigurationError("adam_lr must be positive and max_resample non-negative")
        for name in ("net1_hidden", "net2_hidden", "netI_hidden"):
            sizes = getattr(self, name)
            if sizes is not None and any(int(h) < 1 for h in sizes):
                raise ConfigurationError(f"{name} sizes must be positive")
        return self

    def eps(self, problem) -> float:
        return problem.default_eps if self.eps_interface is None else float(self.eps_interface)

    def layer_sizes(self, problem) -> dict:
        out = {}
        for key, n_in, n_out in (
            ("net1", problem.n_in, problem.n_fields),
            ("net2", problem.n_in, problem.n_fields),
            ("netI", 1, 1),
        ):
            hidden = getattr(self, f"{key}_hidden")
            hidden = problem.default_hidden[key] if hidden is None else hidden
            out[key] = [n_in, *[int(h) for h in hidden], n_out]
        return out

    def to_json(self) -> dict:
        doc = asdict(self)
        for k in ("net1_hidden", "net2_hidden", "netI_hidden"):
            if doc[k] is not None:
                doc[k] = list(doc[k])
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown training keys: {sorted(unknown)}")
        doc = dict(doc)
        for k in ("net1_hidden", "net2_hidden", "netI_hidden"):
            v = doc.get(k)
            if v is not None:
                doc[k] = (int(v),) if isinstance(v, (int, float)) else tuple(v)
        return cls(**doc)


# --------------------------------------------------------------------- models


@dataclass(frozen=True)
class PisalModel:
    net1: Mlp
    net2: Mlp
    netI: Mlp
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if self.netI.n_out != 1 or self.netI.n_in != 1:
            raise ConfigurationError("the interface network maps one input to one output")
        if not (math.isfinite(self.lambda1) and math.isfinite(self.lambda2)):
            raise NumericError("coefficients must be finite")

    def interface(self, problem, s) -> np.ndarray:
        s = np.asarray(s, dtype=float).reshape(-1, 1)
        return self.netI(s)[:, 0] + problem.interface_offset

    def predict_region(self, Z, region) -> np.ndarray:
        return (self.net1 if region == REGION1 else self.net2)(Z)

    def predict(self, problem, Z, regions=None) -> np.ndarray:
        """Fields at ``Z``; each point uses the network of ``regions`` (default: own interface)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if regions is None:
            regions = classify_array(problem, self, Z, 0.0)
        out = np.empty((Z.shape[0], self.net1.n_out))
        for r in (REGION1, REGION2):
            mask = regions == r
            if mask.any():
                out[mask] = self.predict_region(Z[mask], r)
        band = regions == BAND
        if band.any():
            out[band] = self.net1(Z[band])
        return out

    def to_json(self) -> dict:
        return {
            "net1": to_json(self.net1),
            "net2": to_json(self.net2),
            "netI": to_json(self.netI),
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
        }

    @classmethod
    def from_json(cls, doc) -> "PisalModel":
        return cls(
            from_json(doc["net1"]), from_json(doc["net2"]), from_json(doc["netI"]),
            float(doc["lambda1"]), float(doc["lambda2"]),
        )


@dataclass(frozen=True)
class PinnModel:
    net: Mlp
    lam: float

    def predict(self, problem=None, Z=None, regions=None) -> np.ndarray:
        return self.net(np.atleast_2d(Z))

    def to_json(self) -> dict:
        return {"net": to_json(self.net), "lambda": self.lam}

    @classmethod
    def from_json(cls, doc) -> "PinnModel":
        return cls(from_json(doc["net"]), float(doc["lambda"]))


def init_model(problem, config: TrainConfig) -> PisalModel:
    sizes = config.layer_sizes(problem)
    nets = [init_xavier(sizes[k], substream(config.seed, f"init/{k}")) for k in ("net1", "net2", "netI")]
    nets = [replace(n, seed=config.seed) for n in nets]
    return PisalModel(*nets, config.lambda_init, config.lambda_init)


# --------------------------------------------------------------- partitioning


def _interface_fn(problem, netI):
    if isinstance(netI, PisalModel):
        netI = netI.netI
    if isinstance(netI, Mlp):
        return lambda s: netI(np.asarray(s, dtype=float).reshape(-1, 1))[:, 0] + problem.interface_offset
    return lambda s: np.broadcast_to(np.asarray(netI(np.asarray(s, dtype=float)), dtype=float), np.shape(s))


def classify_array(problem, netI, Z, eps) -> np.ndarray:
    """Region codes for inputs ``Z`` against the interface predicted by ``netI``.

    ``netI`` is an interface network (its output is shifted by the problem's
    offset) or a plain function giving the interface position directly.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] == 0:
        return np.zeros(0, dtype=int)
    curve = _interface_fn(problem, netI)(Z[:, problem.interface_input_axis])
    c = Z[:, problem.normal_axis]
    side1 = c < curve if problem.region1_below else c > curve
    codes = np.where(side1, REGION1, REGION2)
    return np.where(np.abs(c - curve) <= eps, BAND, codes)


def classify(netI, point: SamplePoint, eps: float, problem) -> RegionTag:
    return RegionTag.from_code(classify_array(problem, netI, point.as_input()[None, :], eps)[0])


@dataclass(frozen=True)
class PartitionedData:
    """Index sets into D and E; band members belong to both media.

    ``fit1``/``fit2`` are the measurements each medium's data term is fitted
    to: ``d1``/``d2`` without the band points lying past the predicted
    interface, unless the partition was built with ``band_data="both"``.
    ``balance1``/``balance2`` weight the fields in those data terms.
    """

    D: Dataset
    E: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    di: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    ei: np.ndarray
    fit1: np.ndarray | None = None
    fit2: np.ndarray | None = None
    balance1: np.ndarray | None = None
    balance2: np.ndarray | None = None

    def fit_key(self, region) -> str:
        key = "fit1" if region == REGION1 else "fit2"
        if getattr(self, key) is None:
            return "d1" if region == REGION1 else "d2"
        return key

    def field_weights(self, region) -> np.ndarray:
        w = self.balance1 if region == REGION1 else self.balance2
        return np.ones(self.D.U.shape[1]) if w is None else w

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(a) for a in (self.d1, self.d2, self.di, self.e1, self.e2, self.ei))

    @property
    def degenerate(self) -> bool:
        return len(self.di) == 0 or len(self.ei) == 0

    def data(self, which: str) -> Dataset:
        idx = getattr(self, which)
        return Dataset(self.D.Z[idx], self.D.U[idx], self.D.is_initial[idx])

    def points(self, which: str) -> np.ndarray:
        return self.E[getattr(self, which)]


def field_balance(U) -> np.ndarray:
    """Weights that give every field the same mean square, keeping the total."""
    ms = np.mean(np.asarray(U, dtype=float) ** 2, axis=0) if len(U) else np.ones(np.shape(U)[1])
    ms = np.where(ms > 0, ms, 1.0)
    return ms.mean() / ms


def partition(netI, D: Dataset, E, eps: float, problem, band_data="own_side",
              balance="none") -> PartitionedData:
    cd = classify_array(problem, netI, D.Z, eps)
    ce = classify_array(problem, netI, E, eps)

    def split(c):
        return np.flatnonzero(c != REGION2), np.flatnonzero(c != REGION1), np.flatnonzero(c == BAND)

    fit = (None, None)
    if band_data == "own_side":
        fit = split(classify_array(problem, netI, D.Z, 0.0))[:2]
    elif band_data != "both":
        raise ConfigurationError("band_data must be 'own_side' or 'both'")
    part = PartitionedData(D, np.asarray(E, dtype=float), *split(cd), *split(ce), *fit)
    if balance == "fields":
        weights = [field_balance(D.U[getattr(part, part.fit_key(r))]) for r in (REGION1, REGION2)]
        part = replace(part, balance1=weights[0], balance2=weights[1])
    elif balance != "none":
        raise ConfigurationError("data_balance must be 'none' or 'fields'")
    return part


# ---------------------------------------------------------------- batched loss


def _bucket(n: int) -> int:
    step = 64 if n <= 1024 else 256
    return max(step, step * -(-n // step))


def _padded(arrays, n, floor=0):
    """Pad leading axes to a bucket size of at least ``floor``; weights 1/n on real rows, 0 on padding."""
    if n == 0:
        raise PartitionDegenerateError("cannot average over an empty set")
    m = max(_bucket(n), floor)
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=float)
        pad = np.repeat(a[:1], m - n, axis=0)
        out.append(jnp.asarray(np.concatenate([a, pad], axis=0)))
    w = np.zeros(m)
    w[:n] = 1.0 / n
    return out, jnp.asarray(w)


class _Engine:
    """Jitted loss pieces for one problem and one set of layer sizes."""

    def __init__(self, problem, sizes, anchor=True):
        self.problem = problem
        self.anchor = anchor
        self._caps = {}
        self.f = {k: net_field(v) for k, v in sizes.items()}
        P = problem
        f1, f2, fI = self.f["net1"], self.f["net2"], self.f["netI"]

        def medium_terms(params, lam, Zd, Ud, wd, Ze, we, region):
            field_ = f1 if region == REGION1 else f2
            pred = field_.value(params, Zd)
            dm = jnp.sum(wd * (pred - Ud) ** 2)
            r = P.bulk_residual(field_, params, lam, Ze, region)
            pm = jnp.sum(we * jnp.sum(r * r, axis=1))
            return dm, pm

        def data_loss(params, Zd, Ud, wd, region):
            field_ = f1 if region == REGION1 else f2
            return jnp.sum(wd * (field_.value(params, Zd) - Ud) ** 2)

        def medium_loss(params, lam, Zd, Ud, wd, Ze, we, region):
            dm, pm = medium_terms(params, lam, Zd, Ud, wd, Ze, we, region)
            return dm + pm

        def joint_loss(x, *args, region):
            return medium_loss(x[:-1], x[-1], *args, region)

        def bulk_affine(params, Ze, we, region):
            # bulk residuals are affine in the coefficient: r(lam) = a + lam * b
            field_ = f1 if region == REGION1 else f2
            a = P.bulk_residual(field_, params, 0.0, Ze, region)
            b = P.bulk_residual(field_, params, 1.0, Ze, region) - a
            w = we[:, None]
            return jnp.sum(w * a * a), jnp.sum(w * a * b), jnp.sum(w * b * b)

        def interface_terms(pI, p1, p2, lam1, lam2, Zdi, Udi, wdi, Sei, wei):
            rd = P.interface_data(f1, p1, f2, p2, fI, pI, Zdi, Udi)
            dm = jnp.sum(wdi * jnp.sum(rd * rd, axis=1))
            r = P.interface_residual(f1, p1, f2, p2, fI, pI, lam1, lam2, Sei)
            anchor = P.interface_anchor(fI, pI, self.anchor)
            pm = jnp.sum(wei * jnp.sum(r * r, axis=1)) + jnp.sum(anchor * anchor)
            return dm, pm

        def interface_loss(pI, *args):
            dm, pm = interface_terms(pI, *args)
            return dm + pm

        self.medium_terms = jax.jit(medium_terms, static_argnames="region")
        self.data_vg = jax.jit(jax.value_and_grad(data_loss), static_argnames="region")
        self.medium_vg = jax.jit(jax.value_and_grad(medium_loss), static_argnames="region")
        self.joint_vg = jax.jit(jax.value_and_grad(joint_loss), static_argnames="region")
        self.bulk_affine = jax.jit(bulk_affine, static_argnames="region")
        self.interface_terms = jax.jit(interface_terms)
        self.interface_vg = jax.jit(jax.value_and_grad(interface_loss))

    # batches -----------------------------------------------------------
    def reset_padding(self):
        # a fresh run must see the same padded shapes as any other run
        self._caps.clear()

    def _pad(self, key, arrays, n):
        # padded sizes only grow, so set sizes hovering at a bucket edge
        # do not trigger a recompilation on every repartition
        arrays, w = _padded(arrays, n, self._caps.get(key, 0))
        self._caps[key] = len(w)
        return arrays, w

    def medium_batch(self, part: PartitionedData, region):
        d, e = part.fit_key(region), ("e1" if region == REGION1 else "e2")
        data = part.data(d)
        (Zd, Ud), wd = self._pad(d, [data.Z, data.U], len(data))
        (Ze,), we = self._pad(e, [part.points(e)], len(getattr(part, e)))
        return Zd, Ud, wd[:, None] * jnp.asarray(part.field_weights(region)), Ze, we

    def interface_batch(self, part: PartitionedData):
        data = part.data("di")
        (Zd, Ud), wd = self._pad("di", [data.Z, data.U], len(data))
        S = part.points("ei")[:, self.problem.interface_input_axis]
        (Se,), we = self._pad("ei", [S], len(S))
        return Zd, Ud, wd, Se, we

    def terms(self, th, lam, part) -> dict:
        out = {}
        for region, tag in ((REGION1, "u1"), (REGION2, "u2")):
            dm, pm = self.medium_terms(
                th[region], lam[region], *self.medium_batch(part, region), region=region
            )
            out[f"mse_dm_{tag}"], out[f"mse_pm_{tag}"] = float(dm), float(pm)
        dm, pm = self.interface_terms(th[BAND], th[REGION1], th[REGION2], lam[REGION1], lam[REGION2],
                                      *self.interface_batch(part))
        out["mse_dm_i"], out["mse_pm_i"] = float(dm), float(pm)
        return {k: out[k] for k in TERM_NAMES}


def _fg(vg, *args, **kw):
    def fg(x):
        val, g = vg(jnp.asarray(x), *args, **kw)
        return float(val), np.asarray(g, dtype=float)

    return fg


def loss_terms(model: PisalModel, problem, part: PartitionedData, anchor=True) -> dict:
    """The six loss terms of ``model`` on ``part`` (batched route)."""
    engine = _engine_for(problem, model, anchor)
    th = {REGION1: flatten(model.net1), REGION2: flatten(model.net2), BAND: flatten(model.netI)}
    lam = {REGION1: model.lambda1, REGION2: model.lambda2}
    return engine.terms(th, lam, part)


def loss_terms_fields(problem, fields_, params, lam, part: PartitionedData, anchor=True) -> dict:
    """Like ``loss_terms`` for arbitrary field callables (e.g. exact solutions)."""
    f1, f2, fI = fields_
    p1, p2, pI = params
    out = {}
    for region, fld, p, e in ((REGION1, f1, p1, "e1"), (REGION2, f2, p2, "e2")):
        tag = "u1" if region == REGION1 else "u2"
        data = part.data(part.fit_key(region))
        if len(data) == 0 or len(getattr(part, e)) == 0:
            raise PartitionDegenerateError(f"empty set for medium {region}")
        pred = fld.value(p, jnp.asarray(data.Z))
        fw = part.field_weights(region)
        out[f"mse_dm_{tag}"] = float(jnp.mean(jnp.sum(fw * (pred - data.U) ** 2, axis=1)))
        r = problem.bulk_residual(fld, p, lam[region - 1], jnp.asarray(part.points(e)), region)
        out[f"mse_pm_{tag}"] = float(jnp.mean(jnp.sum(r * r, axis=1)))
    if part.degenerate:
        raise PartitionDegenerateError("empty interface set")
    data = part.data("di")
    rd = problem.interface_data(f1, p1, f2, p2, fI, pI, jnp.asarray(data.Z), jnp.asarray(data.U))
    out["mse_dm_i"] = float(jnp.mean(jnp.sum(rd * rd, axis=1)))
    S = jnp.asarray(part.points("ei")[:, problem.interface_input_axis])
    r = problem.interface_residual(f1, p1, f2, p2, fI, pI, lam[0], lam[1], S)
    a = problem.interface_anchor(fI, pI, anchor)
    out["mse_pm_i"] = float(jnp.mean(jnp.sum(r * r, axis=1)) + jnp.sum(a * a))
    return {k: out[k] for k in TERM_NAMES}


_ENGINES: dict = {}


def _engine_for(problem, model_or_sizes, anchor=True) -> _Engine:
    if isinstance(model_or_sizes, PisalModel):
        sizes = {k: getattr(model_or_sizes, k).layer_sizes for k in ("net1", "net2", "netI")}
    else:
        sizes = {k: tuple(v) for k, v in model_or_sizes.items()}
    key = (id(problem), tuple(sorted(sizes.items())), bool(anchor))
    if key not in _ENGINES:
        _ENGINES[key] = (problem, _Engine(problem, sizes, anchor))
    return _ENGINES[key][1]


# ----------------------------------------------------------------- tape route


def loss_terms_on_tape(model: PisalModel, problem, part: PartitionedData, anchor=True):
    """The six loss terms as nodes of one tape, with parameters and coefficients as leaves.

    Returns ``(tape, terms, leaves)`` where ``leaves`` maps ``net1``/``net2``/
    ``netI``/``lambda1``/``lambda2`` to their leaf nodes.  Intended for small
    models and sets.
    """
    from .network import param_leaves

    tape = Tape()
    leaves = {k: param_leaves(getattr(model, k), tape, k) for k in ("net1", "net2", "netI")}
    leaves["lambda1"] = [tape.leaf("lambda1", model.lambda1)]
    leaves["lambda2"] = [tape.leaf("lambda2", model.lambda2)]

    def net(key):
        mlp, params = getattr(model, key), leaves[key]
        return lambda t, inputs: forward_on_tape(mlp, t, inputs, key, params)

    def mean_sq(rows):
        if not rows:
            raise PartitionDegenerateError("cannot average over an empty set")
        return tape.sum([tape.sum([tape.square(c) for c in row]) for row in rows]) / float(len(rows))

    terms = {}
    for region, key, e, tag in ((REGION1, "net1", "e1", "u1"), (REGION2, "net2", "e2", "u2")):
        data = part.data(part.fit_key(region))
        scale = np.sqrt(part.field_weights(region))
        f = net(key)
        rows = []
        for z, u in zip(data.Z, data.U):
            out = f(tape, [tape.const(float(c)) for c in z])
            rows.append([(o - float(v)) * float(c) for o, v, c in zip(out, u, scale)])
        terms[f"mse_dm_{tag}"] = mean_sq(rows)
        lam = leaves[f"lambda{region}"][0]
        terms[f"mse_pm_{tag}"] = mean_sq(
            [problem.bulk_residual_tape(tape, f, lam, z, region) for z in part.points(e)]
        )
    n1, n2, nI = net("net1"), net("net2"), net("netI")
    data = part.data("di")
    terms["mse_dm_i"] = mean_sq(
        [problem.interface_data_tape(tape, n1, n2, nI, z, u) for z, u in zip(data.Z, data.U)]
    )
    S = part.points("ei")[:, problem.interface_input_axis]
    l1, l2 = leaves["lambda1"][0], leaves["lambda2"][0]
    pm_i = mean_sq([problem.interface_residual_tape(tape, n1, n2, nI, l1, l2, float(s)) for s in S])
    anchors = problem.interface_anchor_tape(tape, nI, anchor)
    if anchors:
        pm_i = pm_i + tape.sum([tape.square(a) for a in anchors])
    terms["mse_pm_i"] = pm_i
    return tape, {k: terms[k] for k in TERM_NAMES}, leaves


# --------------------------------------------------------------------- logging


@dataclass(frozen=True)
class TrainLogRecord:
    k: int
    mse_dm_u1: float
    mse_dm_u2: float
    mse_dm_i: float
    mse_pm_u1: float
    mse_pm_u2: float
    mse_pm_i: float
    lambda1: float
    lambda2: float
    n_d1: int
    n_d2: int
    n_di: int
    n_e1: int
    n_e2: int
    n_ei: int
    seconds: float = 0.0

    @property
    def mse_m(self) -> float:
        return (self.mse_dm_u1 + self.mse_dm_u2 + self.mse_dm_i
                + self.mse_pm_u1 + self.mse_pm_u2 + self.mse_pm_i)

    def row(self) -> list[str]:
        out = []
        for name in LOG_HEADER:
            v = getattr(self, name)
            out.append(str(v) if isinstance(v, (int, np.integer)) else f"{float(v):.17g}")
        return out


def write_log_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in records:
            w.writerow(r.row())


def read_log_csv(path) -> list[TrainLogRecord]:
    rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    out = []
    for r in rows:
        vals = {k: (int(v) if k == "k" or k.startswith("n_") else float(v)) for k, v in r.items()}
        out.append(TrainLogRecord(**vals))
    return out


def _rng_state(rng) -> dict:
    return rng.bit_generator.state


def save_bundle(path, model, config: TrainConfig, rngs: dict | None = None) -> None:
    doc = {
        "model": model.to_json(),
        "config": config.to_json(),
        "rng_state": {k: _rng_state(g) for k, g in (rngs or {}).items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_bundle(path):
    doc = json.loads(Path(path).read_text())
    m = doc["model"]
    model = PisalModel.from_json(m) if "netI" in m else PinnModel.from_json(m)
    return model, TrainConfig.from_json(doc["config"]), doc.get("rng_state", {})


# -------------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: PisalModel | PinnModel
    log: list
    D: Dataset
    E: np.ndarray
    rngs: dict = field(default_factory=dict)
    seconds: float = 0.0


def _check_finite(terms: dict, model, log):
    bad = [k for k, v in terms.items() if not math.isfinite(v)]
    if bad:
        raise NumericError(f"non-finite loss terms {bad}", model=model, log=log)


def _fit_lambda(state: AdamState, lam: float, quad, steps: int):
    """Adam on the coefficient, whose bulk loss is the quadratic aa + 2 ab lam + bb lam^2."""
    _, ab, bb = quad
    x = np.array([lam])
    for _ in range(steps):
        grad = 2.0 * (ab + bb * x)
        state, x = adam_step(state, x, grad)
    return state, float(x[0])


@dataclass(frozen=True)
class _Objective:
    """Loss pieces for one network and its coefficient."""

    vg: Callable  # (params, lam) -> (loss, d/dparams)
    joint_vg: Callable  # params with lam appended -> (loss, gradient)
    data_vg: Callable  # params -> (data loss, gradient)
    quad: Callable  # params -> (aa, ab, bb) of the bulk loss in lam

    def loss(self, x, lam) -> float:
        return float(self.vg(jnp.asarray(x), lam)[0])


def _medium_objective(engine, region, batch) -> _Objective:
    Zd, Ud, wd, Ze, we = batch
    return _Objective(
        lambda x, lam: engine.medium_vg(x, lam, Zd, Ud, wd, Ze, we, region=region),
        lambda x: engine.joint_vg(x, Zd, Ud, wd, Ze, we, region=region),
        lambda x: engine.data_vg(x, Zd, Ud, wd, region=region),
        lambda x: engine.bulk_affine(x, Ze, we, region=region),
    )


def _fit_medium(obj: _Objective, cfg, th, lam, adam, on_error, state=None):
    """Train one network and its coefficient with the interface frozen.

    ``joint``: one L-BFGS run over the weights with the coefficient appended,
    continuing the curvature history in ``state`` when given.
    ``adam``: ``rounds`` alternations of L-BFGS on the weights and Adam on the
    coefficient, sharing one L-BFGS history.  Either way the best iterate is
    kept, and the start is returned unchanged if nothing improves on it.
    """
    start = obj.loss(th, lam)
    if not math.isfinite(start):
        raise on_error("non-finite loss at the start of a field block")
    best, kept = start, (th, lam, adam)
    if cfg.lambda_update == "joint":
        state = state or LbfgsState(max_iter=cfg.lbfgs_field_iters, mem=cfg.lbfgs_mem)
        res = lbfgs_minimize(_fg(obj.joint_vg), np.append(th, lam), state)
        th_new, lam_new = res.x[:-1], float(res.x[-1])
        now = obj.loss(th_new, lam_new)
        if math.isfinite(now) and now < best:
            kept = (th_new, lam_new, adam)
        return kept
    state = LbfgsState(max_iter=cfg.lbfgs_field_iters // cfg.rounds, mem=cfg.lbfgs_mem)
    for _ in range(cfg.rounds):
        th = lbfgs_minimize(_fg(obj.vg, lam), th, state).x
        quad = [float(v) for v in obj.quad(jnp.asarray(th))]
        adam, lam = _fit_lambda(adam, lam, quad, cfg.adam_steps)
        now = obj.loss(th, lam)
        if not math.isfinite(now):
            break
        if now < best:
            best, kept = now, (th, lam, adam)
    return kept


def _pretrain(obj: _Objective, cfg, th, lam, adam):
    """Fit the network to its data alone, then move the coefficient by Adam at fixed weights."""
    if cfg.pretrain_iters:
        state = LbfgsState(max_iter=cfg.pretrain_iters, mem=cfg.lbfgs_mem)
        th = lbfgs_minimize(_fg(obj.data_vg), th, state).x
    if cfg.adam_warmup:
        quad = [float(v) for v in obj.quad(jnp.asarray(th))]
        adam, lam = _fit_lambda(adam, lam, quad, cfg.adam_warmup)
    return th, lam, adam


def _model_from(sizes, th, lam, seed, cls_args=None) -> PisalModel:
    return PisalModel(
        unflatten(sizes["net1"], th[REGION1], seed),
        unflatten(sizes["net2"], th[REGION2], seed),
        unflatten(sizes["netI"], th[BAND], seed),
        float(lam[REGION1]),
        float(lam[REGION2]),
    )


def sal_train(problem, config: TrainConfig, init: PisalModel | None = None,
              callback: Callable | None = None, data=None) -> TrainResult:
    """Alternating training of the interface and the two media.

    Stops once the total loss is at most ``config.delta_train`` or after
    ``config.k_max`` outer iterations.  ``callback(record, model)`` is called
    after every logged step.  ``data`` may supply a fixed ``(D, E)``.
    """
    cfg = config.validate()
    t_start = time.perf_counter()
    eps = cfg.eps(problem)
    rng_d, rng_e = substream(cfg.seed, "sample/D"), substream(cfg.seed, "sample/E")
    if data is None:
        D, E = sample_dataset(problem, cfg.n_u, cfg.n_f, cfg.n_initial, rng_d=rng_d, rng_e=rng_e)
    else:
        D, E = data
    model = init if init is not None else init_model(problem, cfg)
    sizes = {k: getattr(model, k).layer_sizes for k in ("net1", "net2", "netI")}
    engine = _engine_for(problem, sizes, cfg.anchor)
    engine.reset_padding()
    th = {REGION1: flatten(model.net1), REGION2: flatten(model.net2), BAND: flatten(model.netI)}
    lam = {REGION1: float(model.lambda1), REGION2: float(model.lambda2)}
    adam = {r: AdamState.fresh(1, lr=cfg.adam_lr) for r in (REGION1, REGION2)}
    history = {r: LbfgsState(max_iter=cfg.lbfgs_field_iters, mem=cfg.lbfgs_mem) for r in (REGION1, REGION2)}
    log: list[TrainLogRecord] = []

    def current():
        return _model_from(sizes, th, lam, cfg.seed)

    def split(D, E):
        nonlocal_state = {"D": D, "E": E}
        for attempt in range(cfg.max_resample + 1):
            part = partition(unflatten(sizes["netI"], th[BAND]), nonlocal_state["D"],
                             nonlocal_state["E"], eps, problem, cfg.band_data, cfg.data_balance)
            if not part.degenerate:
                return part
            if attempt == cfg.max_resample:
                break
            nonlocal_state["D"], nonlocal_state["E"] = sample_dataset(
                problem, cfg.n_u, cfg.n_f, cfg.n_initial, rng_d=rng_d, rng_e=rng_e
            )
        raise TrainingError(
            f"interface band stayed empty after {cfg.max_resample} resamples",
            model=current(), log=log,
        )

    def record(k, part):
        terms = engine.terms(th, lam, part)
        _check_finite(terms, current(), log)
        secs = time.perf_counter() - t_start if cfg.log_wallclock else 0.0
        rec = TrainLogRecord(k, *terms.values(), lam[REGION1], lam[REGION2], *part.sizes, secs)
        log.append(rec)
        if callback is not None:
            callback(rec, current())
        return rec

    def fit_interface(part):
        # nets and coefficients frozen; returns the repartitioned sets
        batch_i = engine.interface_batch(part)
        args = (jnp.asarray(th[REGION1]), jnp.asarray(th[REGION2]), lam[REGION1], lam[REGION2], *batch_i)
        fg = _fg(engine.interface_vg, *args)
        f0 = fg(th[BAND])[0]
        res = lbfgs_minimize(fg, th[BAND], LbfgsState(max_iter=cfg.lbfgs_interface_iters, mem=cfg.lbfgs_mem))
        f1 = fg(res.x)[0]
        if math.isfinite(f1) and f1 < f0:
            th[BAND] = res.x
        return split(part.D, part.E)

    def pretrain(part, warmup):
        for region in (REGION1, REGION2):
            obj = _medium_objective(engine, region, engine.medium_batch(part, region))
            th[region], lam[region], adam[region] = _pretrain(
                obj, replace(cfg, adam_warmup=cfg.adam_warmup if warmup else 0),
                th[region], lam[region], adam[region],
            )

    part = split(D, E)
    if init is None:
        # the first split comes from an untrained interface: fit the data,
        # place the interface from that fit, then refit on the corrected sets
        if cfg.pretrain_iters:
            pretrain(part, warmup=False)
            part = fit_interface(part)
        pretrain(part, warmup=True)
    k = 0
    rec = record(k, part)
    while rec.mse_m > cfg.delta_train and k < cfg.k_max:
        k += 1
        part = fit_interface(part)
        # media blocks: interface frozen
        for region in (REGION1, REGION2):
            obj = _medium_objective(engine, region, engine.medium_batch(part, region))
            th[region], lam[region], adam[region] = _fit_medium(
                obj, cfg, th[region], lam[region], adam[region],
                lambda msg: NumericError(msg, model=current(), log=log), history[region],
            )
        rec = record(k, part)
    return TrainResult(current(), log, part.D, part.E, {"sample/D": rng_d, "sample/E": rng_e},
                       time.perf_counter() - t_start)


# --------------------------------------------------------------------- baseline


def pinn_baseline_train(problem, config: TrainConfig, callback: Callable | None = None,
                        data=None) -> TrainResult:
    """One network and one shared coefficient over the whole domain.

    Uses the net1 architecture, the same initialization and the same
    budgets as ``sal_train`` without the interface block.  The source term
    of each collocation point follows its true medium.
    """
    cfg = config.validate()
    t_start = time.perf_counter()
    if data is None:
        D, E = sample_dataset(problem, cfg.n_u, cfg.n_f, cfg.n_initial, seed=cfg.seed)
    else:
        D, E = data
    sizes = cfg.layer_sizes(problem)["net1"]
    net = init_xavier(sizes, substream(cfg.seed, "init/net1"))
    fld = net_field(sizes)
    regions = problem.true_regions(E)
    (Zd, Ud), wd = _padded([D.Z, D.U], len(D))
    fw = field_balance(D.U) if cfg.data_balance == "fields" else np.ones(D.U.shape[1])
    wd = wd[:, None] * jnp.asarray(fw)
    groups = []
    for r in (REGION1, REGION2):
        pts = E[regions == r]
        if len(pts):
            (Ze,), we = _padded([pts], len(pts))
            groups.append((Ze, we * len(pts) / len(E), r))

    def data_loss(params):
        return jnp.sum(wd * (fld.value(params, Zd) - Ud) ** 2)

    def terms(params, lam):
        pm = 0.0
        for Ze, we, r in groups:
            res = problem.bulk_residual(fld, params, lam, Ze, r)
            pm = pm + jnp.sum(we * jnp.sum(res * res, axis=1))
        return data_loss(params), pm

    def total(params, lam):
        dm, pm = terms(params, lam)
        return dm + pm

    def affine(params):
        aa = ab = bb = 0.0
        for Ze, we, r in groups:
            a = problem.bulk_residual(fld, params, 0.0, Ze, r)
            b = problem.bulk_residual(fld, params, 1.0, Ze, r) - a
            w = we[:, None]
            aa, ab, bb = aa + jnp.sum(w * a * a), ab + jnp.sum(w * a * b), bb + jnp.sum(w * b * b)
        return aa, ab, bb

    terms_j = jax.jit(terms)
    obj = _Objective(
        jax.jit(jax.value_and_grad(total)),
        jax.jit(jax.value_and_grad(lambda x: total(x[:-1], x[-1]))),
        jax.jit(jax.value_and_grad(data_loss)),
        jax.jit(affine),
    )
    th = flatten(net)
    lam = float(cfg.lambda_init)
    adam = AdamState.fresh(1, lr=cfg.adam_lr)
    history = LbfgsState(max_iter=cfg.lbfgs_field_iters, mem=cfg.lbfgs_mem)
    log: list[TrainLogRecord] = []
    n = (len(D), 0, 0, len(E), 0, 0)

    def model():
        return PinnModel(unflatten(sizes, th, cfg.seed), lam)

    def record(k):
        dm, pm = (float(v) for v in terms_j(jnp.asarray(th), lam))
        if not (math.isfinite(dm) and math.isfinite(pm)):
            raise NumericError("non-finite baseline loss", model=model(), log=log)
        secs = time.perf_counter() - t_start if cfg.log_wallclock else 0.0
        rec = TrainLogRecord(k, dm, 0.0, 0.0, pm, 0.0, 0.0, lam, lam, *n, secs)
        log.append(rec)
        if callback is not None:
            callback(rec, model())
        return rec

    th, lam, adam = _pretrain(obj, cfg, th, lam, adam)
    rec = record(0)
    k = 0
    while rec.mse_m > cfg.delta_train and k < cfg.k_max:
        k += 1
        th, lam, adam = _fit_medium(
            obj, cfg, th, lam, adam, lambda msg: NumericError(msg, model=model(), log=log), history
        )
        rec = record(k)
    return TrainResult(model(), log, D, E, {}, time.perf_counter() - t_start)
