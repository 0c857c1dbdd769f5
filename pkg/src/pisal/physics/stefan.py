"""Two-phase Stefan problem on [0, 2] x [0, 1].

Heat equation u_t = k_i u_xx on each side of a moving front x = s(t) with
u_1 = u_2 = u* on the front, the Stefan condition
s'(t) = a_1 du_1/dx + a_2 du_2/dx and s(0) = s_0.  With k = (2, 1),
a = (-2, 1), s_0 = 1/2 the closed-form solution is

    u_1 = 2 (exp((t + 1/2 - x) / 2) - 1),   x < s(t)
    u_2 = exp(t + 1/2 - x) - 1,             x > s(t)
    s(t) = t + 1/2,  u* = 0.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import GraphNode, Tape, grad_nodes
from ..errors import DomainError
from ..jet import function_field, jnp
from .base import (
    REGION1, ProblemDefinition, RegionTag, SamplePoint, TapeField, TapeMath,
    fresh_input,
)

K_TRUE = (2.0, 1.0)
ALPHA1, ALPHA2 = -2.0, 1.0
S0 = 0.5
U_STAR = 0.0


class StefanProblem(ProblemDefinition):
    name = "stefan"
    input_names = ("x", "t")
    field_names = ("u",)
    spatial_dim = 1
    time_dependent = True
    bounds = np.array([[0.0, 2.0], [0.0, 1.0]])
    normal_axis = 0
    interface_input_axis = 1
    region1_below = True
    interface_offset = 1.0  # midpoint of the x range
    lambda_names = ("k1", "k2")
    lambda_true = K_TRUE
    default_hidden = {"net1": [100], "net2": [100], "netI": [100]}
    n_bulk = 1
    n_interface = 3
    alpha1, alpha2, s0, u_star = ALPHA1, ALPHA2, S0, U_STAR

    def true_interface(self, t):
        return np.asarray(t, dtype=float) + 0.5

    def closed_form(self, xp, coords, region):
        x, t = coords[0], coords[1]
        if region == REGION1:
            return [2.0 * (xp.exp((t + 0.5 - x) / 2.0) - 1.0)]
        return [xp.exp(t + 0.5 - x) - 1.0]

    # --- exact fields in the two other calculi -------------------------
    def exact_field(self, region):
        return function_field(lambda z: jnp.stack(self.closed_form(jnp, z, region)), 2)

    def exact_interface_field(self):
        offset = self.interface_offset
        return function_field(lambda z: jnp.stack([z[0] + 0.5 - offset]), 1)

    def exact_field_tape(self, region) -> TapeField:
        return lambda tape, inputs: self.closed_form(TapeMath(tape), list(inputs), region)

    def exact_interface_tape(self) -> TapeField:
        offset = self.interface_offset
        return lambda tape, inputs: [inputs[0] + (0.5 - offset)]

    # --- batched residuals (JAX) --------------------------------------
    def bulk_residual(self, field, params, lam, Z, region):
        _, d1, d2 = field(params, Z, (0,))
        return d1[:, 0, 1:2] - lam * d2[:, 0, 0:1]

    def _front(self, fieldI, pI, t):
        s, ds, _ = fieldI(pI, t[:, None])
        return s[:, 0] + self.interface_offset, ds[:, 0, 0]

    def interface_residual(self, f1, p1, f2, p2, fI, pI, lam1, lam2, S):
        s, s_dot = self._front(fI, pI, S)
        Z = jnp.stack([s, S], axis=1)
        u1, g1, _ = f1(p1, Z)
        u2, g2, _ = f2(p2, Z)
        return jnp.stack(
            [
                u1[:, 0] - U_STAR,
                u2[:, 0] - U_STAR,
                s_dot - ALPHA1 * g1[:, 0, 0] - ALPHA2 * g2[:, 0, 0],
            ],
            axis=1,
        )

    def interface_anchor(self, fI, pI, enabled=True):
        s, _ = self._front(fI, pI, jnp.zeros(1))
        return s - S0

    def interface_data(self, f1, p1, f2, p2, fI, pI, Zd, Ud):
        t = Zd[:, 1]
        s, _ = self._front(fI, pI, t)
        Z = jnp.stack([s, t], axis=1)
        u1 = f1.value(p1, Z)[:, 0]
        u2 = f2.value(p2, Z)[:, 0]
        return jnp.stack([u1 - U_STAR, u2 - U_STAR], axis=1)

    # --- tape residuals -------------------------------------------------
    def bulk_residual_tape(self, tape, net, lam, Z, region):
        return [stefan_residual_bulk(tape, net, lam, SamplePoint((Z[0],), Z[1]))]

    def interface_residual_tape(self, tape, net1, net2, netI, lam1, lam2, s_input):
        return stefan_residual_interface(tape, net1, net2, netI, s_input, self, anchor=False)

    def interface_anchor_tape(self, tape, netI, enabled=True):
        (raw,) = netI(tape, [tape.const(0.0)])
        return [raw + self.interface_offset - S0]

    def interface_data_tape(self, tape, net1, net2, netI, z, u):
        t = fresh_input(tape, z[1])
        s = netI(tape, [t])[0] + self.interface_offset
        return [net1(tape, [s, t])[0] - U_STAR, net2(tape, [s, t])[0] - U_STAR]


STEFAN = StefanProblem()


def stefan_exact(x: float, t: float) -> tuple[float, RegionTag]:
    """Exact temperature and medium at ``(x, t)``; points on the front give u*."""
    if not (0.0 <= x <= 2.0 and 0.0 <= t <= 1.0):
        raise DomainError(f"({x}, {t}) is outside [0, 2] x [0, 1]")
    s = t + 0.5
    if abs(x - s) <= 1e-12:
        return U_STAR, RegionTag.INTERFACE_BAND
    if x < s:
        return 2.0 * (np.exp((s - x) / 2.0) - 1.0), RegionTag.REGION1
    return np.exp(s - x) - 1.0, RegionTag.REGION2


def stefan_residual_bulk(tape: Tape, net: TapeField, k, point: SamplePoint) -> GraphNode:
    """u_t - k u_xx at ``point`` as a node differentiable in the net and ``k``."""
    x = fresh_input(tape, point.coords[0])
    t = fresh_input(tape, point.time)
    u = net(tape, [x, t])[0]
    u_x, u_t = grad_nodes(tape, u, [x, t])
    (u_xx,) = grad_nodes(tape, u_x, [x])
    return u_t - k * u_xx


def stefan_residual_interface(tape, net1, net2, netI, t, problem=STEFAN, anchor=True):
    """Front residuals at time ``t``: [u_1 - u*, u_2 - u*, Stefan condition(, s(0) - s_0)].

    ``netI`` returns the front relative to ``problem.interface_offset``.
    """
    if not isinstance(t, GraphNode):
        t = fresh_input(tape, float(t))
    s = netI(tape, [t])[0] + problem.interface_offset
    (s_dot,) = grad_nodes(tape, s, [t])
    u1 = net1(tape, [s, t])[0]
    u2 = net2(tape, [s, t])[0]
    (u1_x,) = grad_nodes(tape, u1, [s])
    (u2_x,) = grad_nodes(tape, u2, [s])
    out = [
        u1 - U_STAR,
        u2 - U_STAR,
        s_dot - ALPHA1 * u1_x - ALPHA2 * u2_x,
    ]
    if anchor:
        out += problem.interface_anchor_tape(tape, netI)
    return out
