"""Stationary Stokes-Stokes coupling on [0, 1] x [-1, 1] with friction interface.

Medium 1 is y > 0, medium 2 is y < 0, separated by the flat line y = 0.
Each medium solves

    sigma u - nu_i lap(u) + grad(p) = g_i,   div(u) = 0,

and on the interface the tangential stress of each side balances a
friction term kappa * (tangential slip) while the normal velocity vanishes.
"""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import GraphNode, Tape, grad_nodes
from ..errors import DomainError
from ..jet import function_field, jnp
from .base import REGION1, REGION2, ProblemDefinition, RegionTag, SamplePoint, TapeMath, fresh_input

NU_TRUE = (0.1, 0.2)
KAPPA = 0.1
SIGMA = 10.0


def _source_poly(x, y, region):
    # sigma u - nu lap(u) of the exact fields, expanded symbolically
    if region == REGION1:
        gx = (-10 * x**4 * y + 10 * x**4 + 20 * x**3 * y - 20 * x**3 - 44 * x**2 * y / 5
              + 44 * x**2 / 5 - 6 * x * y / 5 + 6 * x / 5 + y / 5 - 1 / 5)
        gy = (20 * x**3 * y**2 - 40 * x**3 * y - 2 * x**3 / 5 - 30 * x**2 * y**2 + 60 * x**2 * y
              + 3 * x**2 / 5 + 44 * x * y**2 / 5 - 88 * x * y / 5 - x / 5 + 3 * y**2 / 5 - 6 * y / 5)
    else:
        gx = (-5 * x**4 * y + 20 * x**4 + 10 * x**3 * y - 40 * x**3 - 19 * x**2 * y / 5
              + 76 * x**2 / 5 - 6 * x * y / 5 + 24 * x / 5 + y / 5 - 4 / 5)
        gy = (10 * x**3 * y**2 - 80 * x**3 * y - 2 * x**3 / 5 - 15 * x**2 * y**2 + 120 * x**2 * y
              + 3 * x**2 / 5 + 19 * x * y**2 / 5 - 152 * x * y / 5 - x / 5 + 3 * y**2 / 5
              - 24 * y / 5)
    return gx, gy


class StokesProblem(ProblemDefinition):
    name = "stokes"
    input_names = ("x", "y")
    field_names = ("ux", "uy", "p")
    spatial_dim = 2
    time_dependent = False
    bounds = np.array([[0.0, 1.0], [-1.0, 1.0]])
    normal_axis = 1
    interface_input_axis = 0
    region1_below = False
    interface_offset = 0.0
    lambda_names = ("nu1", "nu2")
    lambda_true = NU_TRUE
    default_hidden = {"net1": [90, 90], "net2": [90, 90], "netI": [100]}
    n_bulk = 3
    n_interface = 4
    sigma, kappa = SIGMA, KAPPA

    def __init__(self, anchor_walls: bool = True):
        self.anchor_walls = anchor_walls

    def true_interface(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def closed_form(self, xp, coords, region):
        x, y = coords[0], coords[1]
        nu1, nu2 = NU_TRUE
        X = x**2 * (x - 1.0) ** 2
        p = xp.cos(xp.pi * x) * xp.sin(xp.pi * y)
        if region == REGION1:
            ux = -X * (y - 1.0)
            uy = x * y * (6 * x + y - 3 * x * y + 2 * x**2 * y - 4 * x**2 - 2)
        else:
            q = x * (x - 1.0) * (2 * x - 1.0)
            ux = -(nu1 / nu2) * X * y + (nu1 / KAPPA + 1.0) * X
            uy = (nu1 / nu2) * q * y**2 - (2 * nu1 / KAPPA + 2.0) * q * y
        return [ux, uy, p]

    def source(self, xp, coords, region):
        """g_i = sigma u - nu_i lap(u) + grad(p) on the medium-``region`` fields."""
        x, y = coords[0], coords[1]
        gx, gy = _source_poly(x, y, region)
        px = -xp.pi * xp.sin(xp.pi * x) * xp.sin(xp.pi * y)
        py = xp.pi * xp.cos(xp.pi * x) * xp.cos(xp.pi * y)
        return gx + px, gy + py

    def exact_field(self, region):
        return function_field(lambda z: jnp.stack(self.closed_form(jnp, z, region)), 2)

    def exact_interface_field(self):
        return function_field(lambda z: jnp.stack([0.0 * z[0] - self.interface_offset]), 1)

    def exact_field_tape(self, region):
        return lambda tape, inputs: self.closed_form(TapeMath(tape), list(inputs), region)

    def exact_interface_tape(self):
        return lambda tape, inputs: [inputs[0] * 0.0 - self.interface_offset]

    # --- batched residuals (JAX) --------------------------------------
    def bulk_residual(self, field, params, lam, Z, region):
        val, d1, d2 = field(params, Z, (0, 1))
        gx, gy = self.source(jnp, (Z[:, 0], Z[:, 1]), region)
        lap_x = d2[:, 0, 0] + d2[:, 0, 1]
        lap_y = d2[:, 1, 0] + d2[:, 1, 1]
        return jnp.stack(
            [
                SIGMA * val[:, 0] - lam * lap_x + d1[:, 2, 0] - gx,
                SIGMA * val[:, 1] - lam * lap_y + d1[:, 2, 1] - gy,
                d1[:, 0, 0] + d1[:, 1, 1],
            ],
            axis=1,
        )

    def _curve(self, fI, pI, x):
        g, dg, _ = fI(pI, x[:, None])
        return g[:, 0] + self.interface_offset, dg[:, 0, 0]

    @staticmethod
    def _frame(slope):
        inv = 1.0 / jnp.sqrt(1.0 + slope * slope)
        tau = (inv, slope * inv)
        n1 = (slope * inv, -inv)
        return tau, n1

    def interface_residual(self, f1, p1, f2, p2, fI, pI, lam1, lam2, S):
        curve, slope = self._curve(fI, pI, S)
        tau, n1 = self._frame(slope)
        n2 = (-n1[0], -n1[1])
        Z = jnp.stack([S, curve], axis=1)
        v1, J1, _ = f1(p1, Z)
        v2, J2, _ = f2(p2, Z)

        def traction(v, J, nu, n):
            tx = nu * (J[:, 0, 0] * n[0] + J[:, 0, 1] * n[1]) - v[:, 2] * n[0]
            ty = nu * (J[:, 1, 0] * n[0] + J[:, 1, 1] * n[1]) - v[:, 2] * n[1]
            return tx * tau[0] + ty * tau[1]

        slip = (v2[:, 0] - v1[:, 0]) * tau[0] + (v2[:, 1] - v1[:, 1]) * tau[1]
        return jnp.stack(
            [
                traction(v1, J1, lam1, n1) - KAPPA * slip,
                traction(v2, J2, lam2, n2) + KAPPA * slip,
                v1[:, 0] * n1[0] + v1[:, 1] * n1[1],
                v2[:, 0] * n2[0] + v2[:, 1] * n2[1],
            ],
            axis=1,
        )

    def interface_anchor(self, fI, pI, enabled=True):
        if not (enabled and self.anchor_walls):
            return jnp.zeros(0)
        curve, _ = self._curve(fI, pI, jnp.array([0.0, 1.0]))
        return curve

    def interface_data(self, f1, p1, f2, p2, fI, pI, Zd, Ud):
        x = Zd[:, 0]
        curve, slope = self._curve(fI, pI, x)
        _, n1 = self._frame(slope)
        Z = jnp.stack([x, curve], axis=1)
        v1 = f1.value(p1, Z)
        v2 = f2.value(p2, Z)
        return jnp.stack(
            [v1[:, 0] * n1[0] + v1[:, 1] * n1[1], -(v2[:, 0] * n1[0] + v2[:, 1] * n1[1])],
            axis=1,
        )

    # --- tape residuals -------------------------------------------------
    def bulk_residual_tape(self, tape, net, lam, Z, region):
        return ns_residual_bulk(tape, net, lam, SamplePoint((Z[0], Z[1])), region, self)

    def interface_residual_tape(self, tape, net1, net2, netI, lam1, lam2, s_input):
        return ns_residual_interface(tape, net1, net2, netI, s_input, lam1, lam2, self, anchor=False)

    def interface_anchor_tape(self, tape, netI, enabled=True):
        if not (enabled and self.anchor_walls):
            return []
        return [netI(tape, [tape.const(v)])[0] + self.interface_offset for v in (0.0, 1.0)]

    def interface_data_tape(self, tape, net1, net2, netI, z, u):
        x = fresh_input(tape, z[0])
        curve, slope = _tape_curve(tape, netI, x, self.interface_offset)
        _, n1 = _tape_frame(tape, slope)
        xs = x + 0.0
        v1 = net1(tape, [xs, curve])
        v2 = net2(tape, [xs, curve])
        return [v1[0] * n1[0] + v1[1] * n1[1], -(v2[0] * n1[0] + v2[1] * n1[1])]


STOKES = StokesProblem()


def _check(x, y):
    if not (0.0 <= x <= 1.0 and -1.0 <= y <= 1.0):
        raise DomainError(f"({x}, {y}) is outside [0, 1] x [-1, 1]")


def ns_exact(x: float, y: float) -> tuple[float, float, float, RegionTag]:
    """Exact velocity, pressure and medium; y > 0 is medium 1."""
    _check(x, y)
    region = REGION1 if y > 0 else REGION2
    ux, uy, p = STOKES.closed_form(math, (float(x), float(y)), region)
    return ux, uy, p, RegionTag.from_code(region)


def ns_source(x: float, y: float, region) -> np.ndarray:
    _check(x, y)
    code = region.code if isinstance(region, RegionTag) else int(region)
    return np.array(STOKES.source(math, (float(x), float(y)), code))


def _tape_curve(tape, netI, x, offset):
    curve = netI(tape, [x])[0] + offset
    (slope,) = grad_nodes(tape, curve, [x])
    return curve, slope


def _tape_frame(tape, slope):
    inv = tape.pow(slope * slope + 1.0, -0.5)
    return (inv, slope * inv), (slope * inv, -inv)


def ns_residual_bulk(tape: Tape, net, nu, point: SamplePoint, source=REGION1, problem=STOKES):
    """[x-momentum, y-momentum, continuity] at ``point``.

    ``source`` is a region (selecting g_1 or g_2) or a callable ``(x, y) -> (gx, gy)``.
    """
    x0, y0 = float(point.coords[0]), float(point.coords[1])
    x = fresh_input(tape, x0)
    y = fresh_input(tape, y0)
    ux, uy, p = net(tape, [x, y])[:3]
    if callable(source):
        gx, gy = source(x0, y0)
    else:
        code = source.code if isinstance(source, RegionTag) else int(source)
        gx, gy = problem.source(math, (x0, y0), code)
    ux_x, ux_y = grad_nodes(tape, ux, [x, y])
    uy_x, uy_y = grad_nodes(tape, uy, [x, y])
    p_x, p_y = grad_nodes(tape, p, [x, y])
    (ux_xx,) = grad_nodes(tape, ux_x, [x])
    (ux_yy,) = grad_nodes(tape, ux_y, [y])
    (uy_xx,) = grad_nodes(tape, uy_x, [x])
    (uy_yy,) = grad_nodes(tape, uy_y, [y])
    return [
        SIGMA * ux - nu * (ux_xx + ux_yy) + p_x - gx,
        SIGMA * uy - nu * (uy_xx + uy_yy) + p_y - gy,
        ux_x + uy_y,
    ]


def ns_residual_interface(tape, net1, net2, netI, x, nu1, nu2, problem=STOKES, anchor=True):
    """[friction 1, friction 2, u_1 . n_1, u_2 . n_2] at (x, curve(x)), plus wall anchors."""
    if not isinstance(x, GraphNode):
        x = fresh_input(tape, float(x))
    curve, slope = _tape_curve(tape, netI, x, problem.interface_offset)
    tau, n1 = _tape_frame(tape, slope)
    n2 = (-n1[0], -n1[1])
    # a separate node for the x slot so its adjoint is a partial derivative
    xs = x + 0.0
    sides = []
    for net, nu, n in ((net1, nu1, n1), (net2, nu2, n2)):
        ux, uy, p = net(tape, [xs, curve])[:3]
        jx = grad_nodes(tape, ux, [xs, curve])
        jy = grad_nodes(tape, uy, [xs, curve])
        tx = nu * (jx[0] * n[0] + jx[1] * n[1]) - p * n[0]
        ty = nu * (jy[0] * n[0] + jy[1] * n[1]) - p * n[1]
        sides.append((ux, uy, tx * tau[0] + ty * tau[1], ux * n[0] + uy * n[1]))
    (u1x, u1y, t1, un1), (u2x, u2y, t2, un2) = sides
    slip = (u2x - u1x) * tau[0] + (u2y - u1y) * tau[1]
    out = [t1 - KAPPA * slip, t2 + KAPPA * slip, un1, un2]
    if anchor:
        out += problem.interface_anchor_tape(tape, netI)
    return out
