"""Scalar computation graph with reverse-mode differentiation.

Every node is appended to a :class:`Tape` in creation order, so the append
order is a topological order.  Values are computed eagerly when a node is
created and can be recomputed for new leaf values with :func:`evaluate`.

Higher derivatives come from :func:`grad_nodes`, which writes the adjoint
computation back onto the tape as ordinary nodes.  The result is itself a
graph and can be differentiated again:

>>> tape = Tape()
>>> x = tape.leaf("x", 2.0)
>>> y = x * x * x
>>> (dy,) = grad_nodes(tape, y, [x])
>>> (d2y,) = grad_nodes(tape, dy, [x])
>>> d2y.value
12.0
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, UnsupportedOrderError, UsageError

__all__ = [
    "GraphNode",
    "Tape",
    "evaluate",
    "gradient",
    "grad_nodes",
    "derivative_nested",
    "check_gradient_fd",
    "OPS",
    "MAX_ORDER",
]

OPS = (
    "leaf", "add", "sub", "mul", "div", "neg", "exp", "ln",
    "tanh", "sin", "cos", "pow", "square",
)
UNARY = {"neg", "exp", "ln", "tanh", "sin", "cos", "pow", "square"}
BINARY = {"add", "sub", "mul", "div"}
MAX_ORDER = 3


class GraphNode:
    """One scalar operation.  ``exponent`` is only used by ``pow``."""

    __slots__ = ("tape", "index", "op", "parents", "value", "exponent", "name")

    def __init__(self, tape, index, op, parents, value, exponent=None, name=None):
        self.tape = tape
        self.index = index
        self.op = op
        self.parents = parents
        self.value = value
        self.exponent = exponent
        self.name = name

    def __repr__(self):
        label = self.name if self.op == "leaf" else self.op
        return f"GraphNode(#{self.index} {label} = {self.value!r})"

    def _lift(self, other):
        if isinstance(other, GraphNode):
            if other.tape is not self.tape:
                raise UsageError("nodes belong to different tapes")
            return other
        return self.tape.const(float(other))

    def __add__(self, other):
        return self.tape.apply("add", self, self._lift(other))

    def __radd__(self, other):
        return self.tape.apply("add", self._lift(other), self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._lift(other), self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, self._lift(other))

    def __rmul__(self, other):
        return self.tape.apply("mul", self._lift(other), self)

    def __truediv__(self, other):
        return self.tape.apply("div", self, self._lift(other))

    def __rtruediv__(self, other):
        return self.tape.apply("div", self._lift(other), self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __pow__(self, exponent):
        if isinstance(exponent, GraphNode):
            raise UsageError("pow supports constant exponents only")
        if exponent == 2:
            return self.tape.apply("square", self)
        return self.tape.apply("pow", self, exponent=float(exponent))


def _forward(op, a, b, exponent, index):
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if b == 0.0:
            raise DomainError(f"division by zero at node #{index}")
        return a / b
    if op == "neg":
        return -a
    if op == "exp":
        return math.exp(a)
    if op == "ln":
        if a <= 0.0:
            raise DomainError(f"ln of non-positive value {a!r} at node #{index}")
        return math.log(a)
    if op == "tanh":
        return math.tanh(a)
    if op == "sin":
        return math.sin(a)
    if op == "cos":
        return math.cos(a)
    if op == "square":
        return a * a
    if op == "pow":
        if a < 0.0 and not float(exponent).is_integer():
            raise DomainError(f"non-integer power of negative value at node #{index}")
        if a == 0.0 and exponent < 0:
            raise DomainError(f"negative power of zero at node #{index}")
        return a ** exponent
    raise ConfigurationError(f"unknown op {op!r}")


class Tape:
    """Append-only node store.  Leaves are registered by name."""

    def __init__(self):
        self.nodes: list[GraphNode] = []
        self.leaves: dict[str, GraphNode] = {}
        self._consts: dict[float, GraphNode] = {}

    def __len__(self):
        return len(self.nodes)

    def _append(self, op, parents, value, exponent=None, name=None):
        node = GraphNode(self, len(self.nodes), op, parents, value, exponent, name)
        self.nodes.append(node)
        return node

    def leaf(self, name: str, value: float) -> GraphNode:
        """Return the leaf called ``name``, creating it with ``value`` if new."""
        node = self.leaves.get(name)
        if node is None:
            node = self._append("leaf", (), float(value), name=name)
            self.leaves[name] = node
        return node

    def const(self, value: float) -> GraphNode:
        # constants are anonymous leaves whose value is bound at creation
        value = float(value)
        node = self._consts.get(value)
        if node is None:
            node = self._append("leaf", (), value)
            self._consts[value] = node
        return node

    def apply(self, op, a, b=None, exponent=None):
        if op in UNARY:
            parents = (a,)
            value = _forward(op, a.value, None, exponent, len(self.nodes))
        elif op in BINARY:
            parents = (a, b)
            value = _forward(op, a.value, b.value, None, len(self.nodes))
        else:
            raise ConfigurationError(f"unknown op {op!r}")
        return self._append(op, parents, value, exponent)

    # convenience constructors for the elementary functions
    def exp(self, a):
        return self.apply("exp", a)

    def ln(self, a):
        return self.apply("ln", a)

    def tanh(self, a):
        return self.apply("tanh", a)

    def sin(self, a):
        return self.apply("sin", a)

    def cos(self, a):
        return self.apply("cos", a)

    def square(self, a):
        return self.apply("square", a)

    def pow(self, a, exponent):
        return self.apply("pow", a, exponent=float(exponent))

    def sum(self, items: Iterable[GraphNode]) -> GraphNode:
        items = list(items)
        if not items:
            return self.const(0.0)
        total = items[0]
        for item in items[1:]:
            total = total + item
        return total


def evaluate(tape: Tape, leaf_values: Mapping[str, float] | None = None) -> np.ndarray:
    """Recompute every node from leaf values; returns values indexed by node.

    Named leaves must all be present in ``leaf_values`` unless the mapping is
    ``None``, in which case the current leaf values are reused.  Cached values
    on the nodes are updated in place.
    """
    if leaf_values is not None:
        missing = [name for name in tape.leaves if name not in leaf_values]
        if missing:
            raise ConfigurationError(f"no value for leaves {missing}")
    values = np.empty(len(tape.nodes))
    for node in tape.nodes:
        if node.op == "leaf":
            if leaf_values is not None and node.name is not None:
                node.value = float(leaf_values[node.name])
        else:
            p = node.parents
            node.value = _forward(
                node.op,
                p[0].value,
                p[1].value if len(p) > 1 else None,
                node.exponent,
                node.index,
            )
        values[node.index] = node.value
    return values


# Local partial derivatives as floats: op -> f(node, a, b) -> (da, db)
def _local_float(node):
    op = node.op
    a = node.parents[0].value
    if op == "add":
        return (1.0, 1.0)
    if op == "sub":
        return (1.0, -1.0)
    if op == "mul":
        return (node.parents[1].value, a)
    if op == "div":
        b = node.parents[1].value
        return (1.0 / b, -node.value / b)
    if op == "neg":
        return (-1.0,)
    if op == "exp":
        return (node.value,)
    if op == "ln":
        return (1.0 / a,)
    if op == "tanh":
        return (1.0 - node.value * node.value,)
    if op == "sin":
        return (math.cos(a),)
    if op == "cos":
        return (-math.sin(a),)
    if op == "square":
        return (2.0 * a,)
    if op == "pow":
        c = node.exponent
        return (c * a ** (c - 1.0),)
    raise ConfigurationError(f"no derivative rule for {op!r}")


# Same rules, building graph nodes: op -> f(tape, node, adjoint) -> parent adjoints
def _vjp_add(tape, node, g):
    return (g, g)


def _vjp_sub(tape, node, g):
    return (g, -g)


def _vjp_mul(tape, node, g):
    a, b = node.parents
    return (g * b, g * a)


def _vjp_div(tape, node, g):
    _, b = node.parents
    gb = g / b
    return (gb, -(gb * node))


def _vjp_neg(tape, node, g):
    return (-g,)


def _vjp_exp(tape, node, g):
    return (g * node,)


def _vjp_ln(tape, node, g):
    return (g / node.parents[0],)


def _vjp_tanh(tape, node, g):
    return (g * (1.0 - tape.square(node)),)


def _vjp_sin(tape, node, g):
    return (g * tape.cos(node.parents[0]),)


def _vjp_cos(tape, node, g):
    return (-(g * tape.sin(node.parents[0])),)


def _vjp_square(tape, node, g):
    return (g * (2.0 * node.parents[0]),)


def _vjp_pow(tape, node, g):
    c = node.exponent
    a = node.parents[0]
    if c - 1.0 == 1.0:
        da = a
    elif c - 1.0 == 0.0:
        return (g * c,)
    else:
        da = tape.pow(a, c - 1.0)
    return (g * (c * da),)


VJP_RULES: dict[str, Callable] = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "neg": _vjp_neg,
    "exp": _vjp_exp,
    "ln": _vjp_ln,
    "tanh": _vjp_tanh,
    "sin": _vjp_sin,
    "cos": _vjp_cos,
    "square": _vjp_square,
    "pow": _vjp_pow,
}
FLOAT_RULE = _local_float


def _check_root(tape, root):
    if not isinstance(root, GraphNode) or root.tape is not tape:
        raise UsageError("root is not a node of this tape")
    if tape.nodes[root.index] is not root:
        raise UsageError("root is not a node of this tape")


def _relevant(tape, root, wrt):
    """Indices on some path wrt -> root, in increasing order."""
    start = min(w.index for w in wrt)
    reach = np.zeros(root.index + 1, dtype=bool)
    for w in wrt:
        if w.index <= root.index:
            reach[w.index] = True
    for node in tape.nodes[start: root.index + 1]:
        if not reach[node.index]:
            reach[node.index] = any(reach[p.index] for p in node.parents)
    if not reach[root.index]:
        return []
    needed = np.zeros_like(reach)
    needed[root.index] = True
    for i in range(root.index, start - 1, -1):
        if needed[i]:
            for p in tape.nodes[i].parents:
                if reach[p.index]:
                    needed[p.index] = True
    return [i for i in range(start, root.index + 1) if needed[i] and reach[i]]


def gradient(tape: Tape, root: GraphNode, leaves: Sequence[GraphNode]) -> np.ndarray:
    """d root / d leaf for each requested node, by reverse accumulation."""
    _check_root(tape, root)
    leaves = list(leaves)
    if not leaves:
        return np.zeros(0)
    adj = np.zeros(root.index + 1)
    adj[root.index] = 1.0
    lowest = min(leaf.index for leaf in leaves)
    for i in range(root.index, lowest, -1):
        g = adj[i]
        if g == 0.0:
            continue
        node = tape.nodes[i]
        if node.op == "leaf":
            continue
        for parent, d in zip(node.parents, FLOAT_RULE(node)):
            adj[parent.index] += g * d
    return np.array([adj[leaf.index] if leaf.index <= root.index else 0.0 for leaf in leaves])


def grad_nodes(tape: Tape, root: GraphNode, wrt: Sequence[GraphNode]) -> list[GraphNode]:
    """Adjoints of ``root`` w.r.t. ``wrt`` as new nodes on the same tape.

    ``wrt`` may contain interior nodes; the adjoint of an interior node is the
    partial derivative of ``root`` with that node's own inputs held fixed.
    """
    _check_root(tape, root)
    wrt = list(wrt)
    if not wrt:
        return []
    order = _relevant(tape, root, wrt)
    adjoint: dict[int, GraphNode] = {root.index: tape.const(1.0)}
    keep = set(order)
    stop = {w.index for w in wrt}
    lowest = min(stop)
    for i in reversed(order):
        g = adjoint.get(i)
        node = tape.nodes[i]
        if g is None or node.op == "leaf" or i == lowest:
            continue
        contribs = VJP_RULES[node.op](tape, node, g)
        for parent, c in zip(node.parents, contribs):
            if parent.index not in keep:
                continue
            prev = adjoint.get(parent.index)
            adjoint[parent.index] = c if prev is None else prev + c
    zero = tape.const(0.0)
    return [adjoint.get(w.index, zero) for w in wrt]


def derivative_nested(
    builder: Callable[[Tape, dict[str, GraphNode]], GraphNode],
    wrt: Sequence[str],
    at: Mapping[str, float],
) -> float:
    """Mixed partial of ``builder`` in the order given by ``wrt``.

    ``builder(tape, leaves)`` must construct the expression over the leaf nodes
    it receives; it is called once on a fresh tape.
    """
    if len(wrt) > MAX_ORDER:
        raise UnsupportedOrderError(f"derivative order {len(wrt)} exceeds {MAX_ORDER}")
    unknown = [name for name in wrt if name not in at]
    if unknown:
        raise UsageError(f"cannot differentiate w.r.t. unknown variables {unknown}")
    tape = Tape()
    leaves = {name: tape.leaf(name, value) for name, value in at.items()}
    node = builder(tape, leaves)
    for name in wrt:
        (node,) = grad_nodes(tape, node, [leaves[name]])
    return node.value


def check_gradient_fd(
    builder: Callable[[Tape, dict[str, GraphNode]], GraphNode],
    at: Mapping[str, float],
    step: float = 1e-5,
) -> float:
    """Worst error of analytic first partials against central differences.

    The error is relative with a unit floor in the denominator,
    ``|a - fd| / max(1, |a|, |fd|)``, so it stays meaningful for vanishing
    derivatives.  Mismatches are reported, never raised.
    """
    if step <= 0:
        raise UsageError("finite-difference step must be positive")
    tape = Tape()
    leaves = {name: tape.leaf(name, value) for name, value in at.items()}
    root = builder(tape, leaves)
    if not isinstance(root, GraphNode):
        root = tape.const(float(root))
    names = list(at)
    analytic = gradient(tape, root, [leaves[n] for n in names])
    worst = 0.0
    for name, a in zip(names, analytic):
        shifted = dict(at)
        shifted[name] = at[name] + step
        f_plus = evaluate(tape, shifted)[root.index]
        shifted[name] = at[name] - step
        f_minus = evaluate(tape, shifted)[root.index]
        fd = (f_plus - f_minus) / (2.0 * step)
        err = abs(a - fd) / max(1.0, abs(a), abs(fd))
        worst = max(worst, err)
    evaluate(tape, dict(at))
    return worst
