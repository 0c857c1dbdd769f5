"""
Scalar tape, nested derivatives and the two optimizers
======================================================

Runs in a few seconds.
"""

import numpy as np

from pisal.autodiff import Tape, derivative_nested, grad_nodes
from pisal.checks import rosenbrock
from pisal.optim import AdamState, LbfgsState, adam_step, lbfgs_minimize

# f(x, y) = tanh(x * y) + x^3, built node by node
tape = Tape()
x = tape.leaf("x", 0.7)
y = tape.leaf("y", -0.4)
f = tape.tanh(x * y) + x * x * x
print("f =", f.value)

# first derivatives are nodes too, so they can be differentiated again
dfdx, dfdy = grad_nodes(tape, f, [x, y])
(d2fdxdy,) = grad_nodes(tape, dfdx, [y])
(d2fdydx,) = grad_nodes(tape, dfdy, [x])
print("df/dx =", dfdx.value, " df/dy =", dfdy.value)
print("mixed partials:", d2fdxdy.value, d2fdydx.value)


# the same through a builder, as the residual code uses it
def build(t, leaves):
    a, b = leaves["x"], leaves["y"]
    return t.tanh(a * b) + a * a * a


print("d2f/dx2 =", derivative_nested(build, ["x", "x"], {"x": 0.7, "y": -0.4}))

# L-BFGS from the classic Rosenbrock start
res = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsState(max_iter=200))
print(f"L-BFGS: x = {res.x}, {res.iterations} iterations, status {res.status}")

# Adam on the same function, for contrast
state, z = AdamState.fresh(2, lr=2e-2), np.array([-1.2, 1.0])
for _ in range(5000):
    state, z = adam_step(state, z, rosenbrock(z)[1])
print("Adam after 5000 steps:", z)
