"""Batched network evaluation with input derivatives, in JAX.

A tanh network is pushed forward in Taylor mode: next to the activations we
carry their first derivatives with respect to every input coordinate and
the pure second derivatives for the requested coordinates.  Each derivative
stream costs one extra matmul per layer, which is far cheaper than
vmapping nested ``jax.grad`` calls.  Parameter gradients of anything built
from these quantities are left to ``jax.grad``.
"""

from __future__ import annotations

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402


def unpack(flat, layer_sizes):
    layers = []
    pos = 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        W = flat[pos: pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = flat[pos: pos + fan_out]
        pos += fan_out
        layers.append((W, b))
    return layers


def mlp_value(flat, layer_sizes, Z):
    layers = unpack(flat, layer_sizes)
    h = Z
    for W, b in layers[:-1]:
        h = jnp.tanh(h @ W.T + b)
    W, b = layers[-1]
    return h @ W.T + b


def mlp_jet(flat, layer_sizes, Z, second=()):
    """Return ``(value, d1, d2)`` for inputs ``Z`` of shape ``(N, n_in)``.

    ``value`` is ``(N, n_out)``, ``d1[:, :, k]`` the derivative w.r.t. input
    ``k`` and ``d2[:, :, j]`` the pure second derivative w.r.t. input
    ``second[j]``.
    """
    layers = unpack(flat, layer_sizes)
    n_in = layer_sizes[0]
    W, b = layers[0]
    a = Z @ W.T + b
    a1 = [jnp.broadcast_to(W[:, k], a.shape) for k in range(n_in)]
    a2 = [jnp.zeros_like(a) for _ in second]
    for W, b in layers[1:]:
        h = jnp.tanh(a)
        s = 1.0 - h * h
        h2 = [s * g2 - 2.0 * h * s * a1[k] * a1[k] for g2, k in zip(a2, second)]
        h1 = [s * g for g in a1]
        a = h @ W.T + b
        a1 = [g @ W.T for g in h1]
        a2 = [g @ W.T for g in h2]
    d1 = jnp.stack(a1, axis=-1)
    d2 = jnp.stack(a2, axis=-1) if second else jnp.zeros(a.shape + (0,))
    return a, d1, d2


def net_field(layer_sizes):
    """Adapt a flat-parameter network to the field-callable protocol.

    A field is ``field(params, Z, second=()) -> (value, d1, d2)``; exact
    solutions implement the same protocol so residual code never needs to
    know whether it is looking at a network or an oracle.
    """
    sizes = tuple(int(s) for s in layer_sizes)

    def field(params, Z, second=()):
        return mlp_jet(params, sizes, Z, tuple(second))

    field.layer_sizes = sizes
    field.value = lambda params, Z: mlp_value(params, sizes, Z)
    return field


def function_field(fn, n_in):
    """Field protocol for a closed-form ``fn(z) -> (n_out,)`` via ``jax.jvp``."""

    def single(z, second):
        val = fn(z)
        eye = jnp.eye(n_in, dtype=z.dtype)
        d1 = jnp.stack([jax.jvp(fn, (z,), (eye[k],))[1] for k in range(n_in)], axis=-1)
        d2 = [
            jax.jvp(lambda w, e=eye[k]: jax.jvp(fn, (w,), (e,))[1], (z,), (eye[k],))[1]
            for k in second
        ]
        d2 = jnp.stack(d2, axis=-1) if d2 else jnp.zeros(val.shape + (0,))
        return val, d1, d2

    def field(params, Z, second=()):
        return jax.vmap(lambda z: single(z, tuple(second)))(Z)

    field.value = lambda params, Z: jax.vmap(fn)(Z)
    return field
