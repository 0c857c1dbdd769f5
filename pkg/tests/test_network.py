import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pisal import autodiff as ad
from pisal.errors import ConfigurationError, UsageError
from pisal.jet import jnp, mlp_jet, mlp_value
from pisal.network import (
    Mlp, flatten, forward_on_tape, init_xavier, load_checkpoint, param_count, save_checkpoint,
    substream, unflatten,
)


def test_xavier_is_seeded():
    a, b = init_xavier([1, 100, 1], 7), init_xavier([1, 100, 1], 7)
    assert np.array_equal(flatten(a), flatten(b))
    assert not np.array_equal(flatten(a), flatten(init_xavier([1, 100, 1], 8)))


def test_parameter_count_and_zero_biases():
    net = init_xavier([2, 90, 90, 3], 0)
    assert net.n_params == param_count([2, 90, 90, 3]) == 8733 == flatten(net).size
    assert all(np.all(b == 0) for b in net.biases)
    assert flatten(init_xavier([1, 1, 1], 0)).size == 4


def test_xavier_variance():
    net = init_xavier([120, 100, 90], 3)
    for W in net.weights:
        fan_out, fan_in = W.shape
        assert np.var(W) == pytest.approx(2.0 / (fan_in + fan_out), rel=0.1)


def test_empty_layers_rejected():
    with pytest.raises(ConfigurationError):
        init_xavier([], 0)
    with pytest.raises(ConfigurationError):
        init_xavier([2, 0, 1], 0)


def test_zero_network_outputs_output_bias():
    sizes = [2, 4, 3]
    vec = np.zeros(param_count(sizes))
    vec[-3:] = [0.5, -1.0, 2.0]
    net = unflatten(sizes, vec)
    np.testing.assert_array_equal(net(np.array([[0.3, -0.7]]))[0], [0.5, -1.0, 2.0])


def test_hand_set_network_on_tape():
    net = unflatten([1, 1, 1], np.array([1.0, 0.0, 2.0, 0.5]))
    tape = ad.Tape()
    (out,) = forward_on_tape(net, tape, [tape.const(0.0)])
    assert out.value == 0.5


def test_tape_arity_mismatch():
    net = init_xavier([2, 3, 1], 0)
    tape = ad.Tape()
    with pytest.raises(UsageError):
        forward_on_tape(net, tape, [tape.const(0.0)])


def test_tape_parameter_gradients_match_fd():
    net = init_xavier([2, 5, 1], 4)
    z = [0.3, -0.4]
    tape = ad.Tape()
    (out,) = forward_on_tape(net, tape, [tape.const(v) for v in z], "w")
    names = [f"w[{i}]" for i in range(net.n_params)]
    grads = ad.gradient(tape, out, [tape.leaves[n] for n in names])
    base = flatten(net)
    h = 1e-5
    for i, g in enumerate(grads):
        up, down = base.copy(), base.copy()
        up[i] += h
        down[i] -= h
        fd = (unflatten(net.layer_sizes, up)(np.array([z]))[0, 0]
              - unflatten(net.layer_sizes, down)(np.array([z]))[0, 0]) / (2 * h)
        assert abs(g - fd) <= 1e-6 * max(1.0, abs(fd))


def test_tape_and_numpy_forward_agree():
    net = init_xavier([2, 6, 6, 3], 5)
    for z in np.random.default_rng(0).uniform(-1, 1, (10, 2)):
        tape = ad.Tape()
        outs = forward_on_tape(net, tape, [tape.const(v) for v in z])
        np.testing.assert_allclose([o.value for o in outs], net(z[None])[0], atol=1e-12, rtol=0)


def test_output_layer_is_affine():
    net = init_xavier([3, 2], 1)
    a, b = np.array([[0.1, 0.2, 0.3]]), np.array([[-1.0, 0.5, 2.0]])
    mid = net(0.5 * (a + b))
    np.testing.assert_allclose(mid, 0.5 * (net(a) + net(b)), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 1000))
def test_flatten_roundtrip(sizes, seed):
    net = init_xavier(sizes, seed)
    back = unflatten(sizes, flatten(net))
    assert np.array_equal(flatten(back), flatten(net))


def test_unflatten_length_mismatch():
    with pytest.raises(UsageError):
        unflatten([1, 2, 1], np.zeros(3))


def test_all_zero_vector_gives_zero_network():
    net = unflatten([2, 3, 1], np.zeros(param_count([2, 3, 1])))
    assert np.all(net(np.ones((4, 2))) == 0)


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    net = init_xavier([2, 7, 3], 11)
    path = tmp_path / "net.json"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.layer_sizes == net.layer_sizes
    assert flatten(back).tobytes() == flatten(net).tobytes()


def test_weights_are_read_only():
    net = init_xavier([1, 2, 1], 0)
    with pytest.raises(ValueError):
        net.weights[0][0, 0] = 1.0


def test_substreams_are_independent_and_reproducible():
    a = substream(3, "init/net1").random(4)
    assert np.array_equal(a, substream(3, "init/net1").random(4))
    assert not np.array_equal(a, substream(3, "init/net2").random(4))
    assert not np.array_equal(a, substream(4, "init/net1").random(4))


def test_jet_derivatives_match_finite_differences():
    sizes = (2, 8, 8, 2)
    net = init_xavier(sizes, 2)
    p = jnp.asarray(flatten(net))
    Z = jnp.asarray(np.random.default_rng(1).uniform(-1, 1, (5, 2)))
    val, d1, d2 = mlp_jet(p, sizes, Z, (0, 1))
    np.testing.assert_allclose(val, net(np.asarray(Z)), atol=1e-13)
    h = 1e-4
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        up, mid, down = (np.asarray(mlp_value(p, sizes, Z + s * e)) for s in (1, 0, -1))
        np.testing.assert_allclose(d1[..., k], (up - down) / (2 * h), atol=1e-8)
        np.testing.assert_allclose(d2[..., k], (up - 2 * mid + down) / h**2, atol=1e-5)


def test_mlp_rejects_bad_shapes():
    with pytest.raises(UsageError):
        Mlp((1, 2, 1), (np.zeros((2, 1)),), (np.zeros(2),))
