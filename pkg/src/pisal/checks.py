"""Oracle suite: derivative, optimizer, physics and loss self-checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .jet import jnp
from .network import forward_on_tape, init_xavier
from .optim import AdamState, LbfgsState, adam_step, lbfgs_minimize
from .physics import STEFAN, STOKES, ns_exact
from .physics.base import REGION1, REGION2


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<44s} {self.value:11.3e}  (limit {self.threshold:.0e})"


def _unit_rel(a, b):
    return abs(a - b) / max(1.0, abs(a), abs(b))


# ------------------------------------------------------------- expressions


def random_expression(rng: np.random.Generator, depth: int = 3):
    """A random smooth builder over leaves ``x`` and ``y``, safe on all of R^2."""

    def grow(d):
        if d == 0 or rng.random() < 0.2:
            kind = rng.integers(3)
            if kind == 2:
                c = float(rng.uniform(-2, 2))
                return lambda t, v: t.const(c)
            name = "xy"[kind]
            return lambda t, v: v[name]
        op = str(rng.choice(["add", "sub", "mul", "div", "neg", "exp", "ln", "tanh",
                             "sin", "cos", "square", "pow"]))
        a = grow(d - 1)
        if op in ("add", "sub", "mul"):
            b = grow(d - 1)
            return {
                "add": lambda t, v: a(t, v) + b(t, v),
                "sub": lambda t, v: a(t, v) - b(t, v),
                "mul": lambda t, v: a(t, v) * b(t, v),
            }[op]
        if op == "div":
            b = grow(d - 1)
            return lambda t, v: a(t, v) / (t.square(b(t, v)) + 1.0)
        if op == "exp":
            return lambda t, v: t.exp(t.tanh(a(t, v)))
        if op == "ln":
            return lambda t, v: t.ln(t.square(a(t, v)) + 1.0)
        if op == "pow":
            e = float(rng.choice([-1.5, 0.5, 2.5, 3.0]))
            return lambda t, v: t.pow(t.square(a(t, v)) + 1.0, e)
        if op == "neg":
            return lambda t, v: -a(t, v)
        return lambda t, v: getattr(t, op)(a(t, v))

    return grow(depth)


def _build(builder, at):
    tape = ad.Tape()
    leaves = {k: tape.leaf(k, v) for k, v in at.items()}
    root = builder(tape, leaves)
    if not isinstance(root, ad.GraphNode):
        root = tape.const(float(root))
    return tape, leaves, root


def _value(builder, at):
    return _build(builder, at)[2].value


def check_first_derivatives(n=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        f = random_expression(rng)
        at = {"x": float(rng.uniform(-1.5, 1.5)), "y": float(rng.uniform(-1.5, 1.5))}
        worst = max(worst, ad.check_gradient_fd(f, at, 1e-5))
        # the node-building route must agree with the float route
        for name in "xy":
            nested = ad.derivative_nested(f, [name], at)
            h = 1e-5
            plus, minus = dict(at), dict(at)
            plus[name] += h
            minus[name] -= h
            fd = (_value(f, plus) - _value(f, minus)) / (2 * h)
            worst = max(worst, _unit_rel(nested, fd))
    return CheckResult("autodiff: first derivatives vs FD", worst <= 1e-6, worst, 1e-6)


def check_second_derivatives(n=100, seed=1):
    rng = np.random.default_rng(seed)
    h = 1e-4
    worst = 0.0
    for _ in range(n):
        f = random_expression(rng)
        at = {"x": float(rng.uniform(-1.5, 1.5)), "y": float(rng.uniform(-1.5, 1.5))}
        for name in "xy":
            d2 = ad.derivative_nested(f, [name, name], at)
            plus, minus = dict(at), dict(at)
            plus[name] += h
            minus[name] -= h
            fd = (_value(f, plus) - 2 * _value(f, at) + _value(f, minus)) / (h * h)
            worst = max(worst, _unit_rel(d2, fd))
    return CheckResult("autodiff: second derivatives vs FD", worst <= 1e-4, worst, 1e-4)


def check_clairaut(n=100, seed=2):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        f = random_expression(rng)
        at = {"x": float(rng.uniform(-1.5, 1.5)), "y": float(rng.uniform(-1.5, 1.5))}
        dxy = ad.derivative_nested(f, ["x", "y"], at)
        dyx = ad.derivative_nested(f, ["y", "x"], at)
        worst = max(worst, abs(dxy - dyx) / (1.0 + abs(dxy)))
    return CheckResult("autodiff: mixed partials commute", worst <= 1e-10, worst, 1e-10)


def check_network_tape(seed=3):
    net = init_xavier([2, 5, 5, 3], seed)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for z in rng.uniform(-1, 1, (10, 2)):
        tape = ad.Tape()
        outs = forward_on_tape(net, tape, [tape.const(z[0]), tape.const(z[1])])
        worst = max(worst, float(np.max(np.abs([o.value for o in outs] - net(z[None])[0]))))
    return CheckResult("network: tape forward vs numpy forward", worst <= 1e-12, worst, 1e-12)


# -------------------------------------------------------------- optimizers


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def check_lbfgs_rosenbrock():
    res = lbfgs_minimize(rosenbrock, [-1.2, 1.0], LbfgsState(max_iter=200))
    err = float(np.linalg.norm(res.x - 1.0))
    return CheckResult("optim: L-BFGS on Rosenbrock", err <= 1e-6 and res.iterations <= 200, err, 1e-6)


def check_lbfgs_quadratic(seed=4):
    rng = np.random.default_rng(seed)
    worst_excess = 0
    worst_g = 0.0
    for n in (2, 5, 10):
        A = rng.normal(size=(n, n))
        H = A @ A.T + n * np.eye(n)
        b = rng.normal(size=n)
        res = lbfgs_minimize(lambda x: (0.5 * x @ H @ x - b @ x, H @ x - b), np.zeros(n),
                             LbfgsState(grad_tol=1e-10))
        worst_g = max(worst_g, float(np.linalg.norm(res.grad)))
        worst_excess = max(worst_excess, res.iterations - (n + 2))
    ok = worst_excess <= 0 and worst_g <= 1e-10
    return CheckResult("optim: L-BFGS quadratic in n+2 steps", ok, worst_g, 1e-10)


def check_adam_step():
    _, x = adam_step(AdamState.fresh(1), np.zeros(1), np.ones(1))
    expected = -1e-3 / (1.0 + 1e-8)
    err = abs(float(x[0]) - expected)
    return CheckResult("optim: first Adam step", err <= 1e-15, err, 1e-15)


# ----------------------------------------------------------------- physics


def _bulk_max(problem, n=1000, seed=5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for r in (REGION1, REGION2):
        Z = problem.sample_box(rng, 4 * n)
        Z = Z[problem.true_regions(Z) == r][:n]
        res = problem.bulk_residual(problem.exact_field(r), None, problem.lambda_true[r - 1],
                                    jnp.asarray(Z), r)
        worst = max(worst, float(jnp.max(jnp.abs(res))))
    return worst


def _interface_max(problem, n=200, seed=6):
    rng = np.random.default_rng(seed)
    lo, hi = problem.bounds[problem.interface_input_axis]
    S = jnp.asarray(rng.uniform(lo, hi, n))
    fI = problem.exact_interface_field()
    res = problem.interface_residual(problem.exact_field(1), None, problem.exact_field(2), None,
                                     fI, None, *problem.lambda_true, S)
    anchor = problem.interface_anchor(fI, None)
    return max(float(jnp.max(jnp.abs(res))), float(jnp.max(jnp.abs(anchor), initial=0.0)))


def _tape_max(problem, n=20, seed=7):
    rng = np.random.default_rng(seed)
    worst = 0.0
    tape = ad.Tape()
    for r in (REGION1, REGION2):
        Z = problem.sample_box(rng, 8 * n)
        for z in Z[problem.true_regions(Z) == r][:n]:
            out = problem.bulk_residual_tape(tape, problem.exact_field_tape(r),
                                             problem.lambda_true[r - 1], z, r)
            worst = max(worst, max(abs(o.value) for o in out))
    lo, hi = problem.bounds[problem.interface_input_axis]
    for s in rng.uniform(lo, hi, n):
        out = problem.interface_residual_tape(
            tape, problem.exact_field_tape(1), problem.exact_field_tape(2),
            problem.exact_interface_tape(), *problem.lambda_true, float(s))
        worst = max(worst, max(abs(o.value) for o in out))
    return worst


def check_residual_zero(problem):
    worst = max(_bulk_max(problem), _interface_max(problem), _tape_max(problem))
    return CheckResult(f"physics: {problem.name} exact residuals", worst <= 1e-8, worst, 1e-8)


def check_stokes_divergence(n=1000, seed=8):
    worst = _bulk_max_component(STOKES, 2, n, seed)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0, 1, n)
    normal = max(abs(ns_exact(x, 0.0)[1]) for x in xs)
    worst = max(worst, normal)
    return CheckResult("physics: stokes divergence and u.n on y=0", worst <= 1e-10, worst, 1e-10)


def _bulk_max_component(problem, j, n, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for r in (REGION1, REGION2):
        Z = jnp.asarray(problem.sample_box(rng, n))
        res = problem.bulk_residual(problem.exact_field(r), None, problem.lambda_true[r - 1], Z, r)
        worst = max(worst, float(jnp.max(jnp.abs(res[:, j]))))
    return worst


def check_loss_routes(seed=9):
    """Batched jets and the scalar tape agree on all six loss terms of a small model."""
    from .physics.dataset import sample_dataset
    from .sal import PisalModel, loss_terms, loss_terms_on_tape, partition

    worst = 0.0
    for problem in (STEFAN, STOKES):
        n_init = 2 if problem.time_dependent else 0
        D, E = sample_dataset(problem, 12, 12, n_init, seed)
        hidden = 4
        nets = [init_xavier([problem.n_in, hidden, problem.n_fields], seed + i) for i in range(2)]
        netI = init_xavier([1, hidden, 1], seed + 2)
        model = PisalModel(nets[0], nets[1], netI, 1.3, 0.7)
        part = partition(netI, D, E, 0.6 * problem.normal_extent, problem)
        batched = loss_terms(model, problem, part)
        _, tape_terms, _ = loss_terms_on_tape(model, problem, part)
        for k, v in batched.items():
            worst = max(worst, abs(v - tape_terms[k].value) / max(1e-12, abs(v)))
    return CheckResult("loss: batched route vs tape route", worst <= 1e-10, worst, 1e-10)


def all_checks():
    return [
        check_first_derivatives,
        check_second_derivatives,
        check_clairaut,
        check_network_tape,
        check_adam_step,
        check_lbfgs_rosenbrock,
        check_lbfgs_quadratic,
        lambda: check_residual_zero(STEFAN),
        lambda: check_residual_zero(STOKES),
        check_stokes_divergence,
        check_loss_routes,
    ]


def run_checks(out=print) -> list[CheckResult]:
    results = []
    for check in all_checks():
        res = check()
        results.append(res)
        if out is not None:
            out(res.line())
    return results
