"""Adam and L-BFGS on flat numpy vectors."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import NumericError, UsageError

__all__ = ["AdamState", "adam_step", "LbfgsState", "LbfgsResult", "lbfgs_minimize", "strong_wolfe"]


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, **hyper)


def adam_step(state: AdamState, params, grad) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns the new state and parameters."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise UsageError(
            f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NumericError(f"non-finite gradient at index {int(bad[0])}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new_params


@dataclass
class LbfgsState:
    mem: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_iter: int = 500
    grad_tol: float = 1e-9
    curvature_eps: float = 1e-10
    max_ls_evals: int = 25
    history: deque = field(default_factory=deque)

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise UsageError("Wolfe constants need 0 < c1 < c2 < 1")
        self.history = deque(self.history, maxlen=self.mem)


@dataclass
class LbfgsResult:
    x: np.ndarray
    loss: float
    iterations: int
    status: str  # "converged" | "max_iter" | "line_search_failed"
    grad: np.ndarray
    n_evals: int


def _direction(g, history):
    q = -g.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if history:
        s, y, _ = history[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic through two points with slopes, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = math.copysign(math.sqrt(rad), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def strong_wolfe(fg, x, f0, g0, p, alpha, c1=1e-4, c2=0.9, max_evals=25):
    """Line search for a step satisfying the strong Wolfe conditions.

    Returns ``(alpha, f, g, n_evals, ok)``.  When no Wolfe point is found the
    lowest sufficient-decrease point seen so far is returned with ``ok=False``
    (alpha is 0 if there is none).
    """
    d0 = float(g0 @ p)
    evals = 0
    best = (0.0, f0, g0)
    # below this, loss differences are rounding noise
    noise = 1e-14 * abs(f0)

    def decrease(a, f, d):
        # Armijo, or a tie within noise at a point whose slope shows the
        # minimizer is reached
        return f <= f0 + c1 * a * d0 or (f <= f0 + noise and d <= (1.0 - 2.0 * c1) * -d0)

    def probe(a):
        nonlocal evals, best
        evals += 1
        f, g = fg(x + a * p)
        f = float(f)
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            return math.inf, None, math.nan
        d = float(g @ p)
        if decrease(a, f, d) and (f < best[1] or (best[0] == 0.0 and abs(d) < abs(d0))):
            best = (a, f, g)
        return f, g, d

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        while evals < max_evals:
            a = None
            if math.isfinite(f_hi) and math.isfinite(d_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            left, right = min(lo, hi), max(lo, hi)
            margin = 0.1 * (right - left)
            if a is None or not (left + margin <= a <= right - margin):
                a = 0.5 * (lo + hi)
            f, g, d = probe(a)
            if not decrease(a, f, d) or f > f_lo + noise:
                hi, f_hi, d_hi = a, f, d
            else:
                if abs(d) <= -c2 * d0:
                    return a, f, g, True
                if d * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, d
            if abs(hi - lo) * max(1.0, float(np.max(np.abs(p)))) < 1e-16:
                break
        return None, None, None, False

    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = alpha
    result = None
    while evals < max_evals:
        f, g, d = probe(a)
        if not decrease(a, f, d) or (evals > 1 and f > f_prev + noise):
            result = zoom(a_prev, f_prev, d_prev, a, f, d)
            break
        if abs(d) <= -c2 * d0:
            result = (a, f, g, True)
            break
        if d >= 0:
            result = zoom(a, f, d, a_prev, f_prev, d_prev)
            break
        a_prev, f_prev, d_prev = a, f, d
        a = 4.0 * a
    if result is None or not result[3]:
        a, f, g = best
        return a, f, g, evals, False
    a, f, g, _ = result
    d = float(g @ p)
    # on a quadratic line restriction the secant root of phi' is the exact
    # minimizer; take it when phi is verified quadratic to rounding
    predicted = f0 + 0.5 * a * (d0 + d)
    if abs(d) > 1e-12 * abs(d0) and abs(f - predicted) <= 1e-12 * max(abs(f0), abs(f), 1e-300):
        a_star = a * d0 / (d0 - d)
        if a_star > 0 and evals < max_evals:
            f2, g2, d2 = probe(a_star)
            # near the minimum loss differences drown in rounding, so judge
            # the refined point by its slope and allow f to tie within noise
            if abs(d2) <= min(abs(d), -c2 * d0) and f2 <= f + noise:
                return a_star, f2, g2, evals, True
    return a, f, g, evals, True


def lbfgs_minimize(
    fg: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    state: LbfgsState | None = None,
    callback: Callable[[int, np.ndarray, float], None] | None = None,
) -> LbfgsResult:
    """Minimize ``fg`` (returning loss and gradient) from ``x0``.

    Stops when the gradient 2-norm drops to ``state.grad_tol``, after
    ``state.max_iter`` accepted steps, or when the line search fails; the
    last case is reported through ``status`` and never raises.  Curvature
    pairs are appended to ``state.history``.
    """
    state = state or LbfgsState()
    x = np.array(x0, dtype=float)
    f, g = fg(x)
    f = float(f)
    g = np.asarray(g, dtype=float)
    n_evals = 1
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericError("loss or gradient is not finite at the starting point")
    history = state.history
    status = "max_iter"
    it = 0
    while it < state.max_iter:
        if np.linalg.norm(g) <= state.grad_tol:
            status = "converged"
            break
        p = _direction(g, history)
        gp = float(g @ p)
        if gp >= 0:
            history.clear()
            p = -g
            gp = float(g @ p)
        alpha = 1.0 if history else min(1.0, 1.0 / float(np.sum(np.abs(g))))
        a, f_new, g_new, evals, ok = strong_wolfe(
            fg, x, f, g, p, alpha, state.c1, state.c2, state.max_ls_evals
        )
        n_evals += evals
        if a == 0.0:
            status = "line_search_failed"
            break
        s = a * p
        y = g_new - g
        sy = float(s @ y)
        x = x + s
        f, g = f_new, g_new
        it += 1
        # scale-free curvature test, so the small steps near a minimum still count
        if sy > state.curvature_eps * np.linalg.norm(s) * np.linalg.norm(y):
            history.append((s, y, 1.0 / sy))
        if callback is not None:
            callback(it, x, f)
        if not ok:
            status = "line_search_failed"
            break
    else:
        if np.linalg.norm(g) <= state.grad_tol:
            status = "converged"
    return LbfgsResult(x, f, it, status, g, n_evals)
