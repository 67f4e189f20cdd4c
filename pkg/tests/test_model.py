import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import identity_net
from fixturegen import random_network
from pinrepair.model import (
    DenseLayer,
    FormatError,
    Network,
    NeuronRef,
    backward,
    dumps_network,
    forward,
    load_network,
    pin,
    predict,
    save_network,
)
from pinrepair.repair import output_loss
from pinrepair.property import OutputConstraint


def naive_forward(net: Network, x, overrides=None):
    """Scalar-loop evaluation; ``overrides`` maps (layer, index) to a constant."""
    overrides = overrides or {}
    h = [float(v) for v in x]
    for k, layer in enumerate(net.layers):
        out = []
        for j in range(layer.out_dim):
            z = float(layer.bias[j])
            for i in range(layer.in_dim):
                z += float(layer.weights[j][i]) * h[i]
            if (k, j) in overrides:
                z = overrides[(k, j)]
            elif layer.activation == "relu":
                z = z if z > 0 else 0.0
            out.append(z)
        h = out
    return np.array(h)


def test_identity_net():
    y, _ = forward(identity_net(), [0.3, -0.7])
    assert y.tolist() == [0.3, -0.7]


def test_single_relu_zeroes_negative_input():
    net = Network((DenseLayer([[1.0]], [0.0]), DenseLayer([[1.0]], [0.0], "identity")), 1)
    _, trace = forward(net, [-2.0])
    assert trace.post[0][0] == 0.0


def test_222_hand_example(net222):
    y, trace = forward(net222, [1.0, -1.0])
    # by hand: pre = (1-1, 1+1) = (0, 2); relu keeps it; out = (0+2, 2)
    assert trace.pre[0].tolist() == [0.0, 2.0]
    assert trace.post[0].tolist() == [0.0, 2.0]
    assert y.tolist() == [2.0, 2.0]
    assert naive_forward(net222, [1.0, -1.0]).tolist() == [2.0, 2.0]


def test_forward_shape_error(net222):
    with pytest.raises(ValueError):
        forward(net222, [1.0, 2.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_forward_matches_naive(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 3, [5, 4], 3)
    x = rng.normal(size=3)
    y, _ = forward(net, x)
    np.testing.assert_allclose(y, naive_forward(net, x), rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-3, 3))
def test_pin_replaces_activation_by_constant(seed, c):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 3, [5, 4], 3)
    o = NeuronRef(int(rng.integers(0, 2)), int(rng.integers(0, 4)))
    x = rng.normal(size=3)
    y, trace = forward(pin(net, o, c), x)
    assert trace.value(o) == c
    np.testing.assert_allclose(y, naive_forward(net, x, {tuple(o): c}), rtol=0, atol=1e-12)


def test_predict_matches_forward():
    rng = np.random.default_rng(3)
    net = pin(random_network(rng, 4, [6, 6], 3), NeuronRef(1, 2), 0.4)
    X = rng.normal(size=(50, 4))
    np.testing.assert_allclose(predict(net, X), np.stack([forward(net, x)[0] for x in X]), atol=1e-12)


# ---------------------------------------------------------------- backward

def _chain(x):
    net = Network((DenseLayer([[1.0]], [0.0]), DenseLayer([[1.0]], [0.0], "identity")), 1)
    _, trace = forward(net, [x])
    return backward(net, trace, [1.0])


def test_backward_active_chain():
    assert _chain(2.0) == {NeuronRef(0, 0): 1.0}


def test_backward_inactive_chain_is_post_activation_gradient():
    assert _chain(-2.0) == {NeuronRef(0, 0): 1.0}


def _loss_at(net, x, omega):
    y, _ = forward(net, x)
    return output_loss(y, omega)[0]


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 4, [8, 8], 3)
    omega = OutputConstraint(sugar=("argmax", int(rng.integers(0, 3))))
    while True:
        x = rng.normal(size=4)
        _, trace = forward(net, x)
        if all(np.abs(p).min() >= 1e-3 for p in trace.pre[:-1]):
            break
    y, trace = forward(net, x)
    _, gy = output_loss(y, omega)
    grads = backward(net, trace, gy)
    h = 1e-5
    for o in net.hidden_neurons():
        z = trace.value(o)
        fd = (_loss_at(pin(net, o, z + h), x, omega) - _loss_at(pin(net, o, z - h), x, omega)) / (2 * h)
        assert abs(grads[o] - fd) <= 1e-5 * max(abs(fd), 1e-3)


def test_backward_blocks_gradient_upstream_of_pin():
    net = Network(
        (
            DenseLayer([[1.0]], [0.0]),
            DenseLayer([[2.0]], [0.0]),
            DenseLayer([[3.0]], [0.0], "identity"),
        ),
        1,
    )
    pinned = pin(net, NeuronRef(1, 0), 5.0)
    _, trace = forward(pinned, [1.0])
    g = backward(pinned, trace, [1.0])
    assert g[NeuronRef(1, 0)] == 3.0
    assert g[NeuronRef(0, 0)] == 0.0


def test_backward_rejects_foreign_trace(net222):
    other = identity_net(3)
    _, trace = forward(other, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        backward(net222, trace, [1.0, 1.0])


# ---------------------------------------------------------------- pin

def test_pin_to_existing_value_changes_nothing(net222):
    x = [-1.0, -1.0]  # neuron (0, 0) has pre-activation -2
    assert forward(net222, x)[1].value(NeuronRef(0, 0)) == 0.0
    assert forward(pin(net222, NeuronRef(0, 0), 0.0), x)[0].tolist() == forward(net222, x)[0].tolist()


def test_pin_step_arithmetic(net222):
    zeta, grad, eta = 0.8, 0.5, 0.35
    pinned = pin(net222, NeuronRef(0, 1), zeta - eta * grad)
    assert pinned.pins[NeuronRef(0, 1)] == pytest.approx(0.625, abs=1e-15)


def test_pin_overwrites_and_leaves_original(net222):
    a = pin(net222, NeuronRef(0, 1), 1.0)
    b = pin(a, NeuronRef(0, 1), -2.0)
    assert b.pins == {NeuronRef(0, 1): -2.0}
    assert a.pins == {NeuronRef(0, 1): 1.0}
    assert net222.pins == {}
    assert forward(b, [0.0, 0.0])[1].value(NeuronRef(0, 1)) == -2.0


@pytest.mark.parametrize("ref", [NeuronRef(1, 0), NeuronRef(0, 2), NeuronRef(-1, 0)])
def test_pin_rejects_bad_address(net222, ref):
    with pytest.raises(IndexError):
        pin(net222, ref, 1.0)


def test_pin_rejects_non_finite(net222):
    with pytest.raises(ValueError):
        pin(net222, NeuronRef(0, 0), float("nan"))


# ---------------------------------------------------------------- I/O

def test_load_minimal_json():
    net = load_network('{"input_dim": 2, "layers": [{"weights": [[1, 0], [0, 1]], "bias": [0, 0], "activation": "identity"}]}')
    assert net.input_dim == 2
    assert net.output_dim == 2


def test_width_mismatch_names_layer():
    doc = {
        "input_dim": 2,
        "layers": [
            {"weights": [[1, 0], [0, 1]], "bias": [0, 0], "activation": "relu"},
            {"weights": [[1, 0, 0]], "bias": [0], "activation": "identity"},
        ],
    }
    with pytest.raises(FormatError) as exc:
        load_network(doc)
    assert "layers[1]" in str(exc.value)


@pytest.mark.parametrize("bad", ["NaN", "Infinity"])
def test_non_finite_rejected(bad):
    text = '{"input_dim": 1, "layers": [{"weights": [[%s]], "bias": [0], "activation": "identity"}]}' % bad
    with pytest.raises(FormatError) as exc:
        load_network(text)
    assert "weights[0][0]" in str(exc.value)


def test_malformed_json_reports_line():
    with pytest.raises(FormatError) as exc:
        load_network('{"input_dim": 2,\n "layers": [}')
    assert "line 2" in str(exc.value)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=6, max_size=6),
       st.floats(-1e300, 1e300))
def test_json_round_trip_bit_exact(vals, pin_value):
    net = Network(
        (DenseLayer(np.reshape(vals[:4], (2, 2)), vals[4:6], "relu"), DenseLayer([[1.0, -1.0]], [0.0], "identity")),
        2,
        {NeuronRef(0, 1): pin_value},
    )
    again = load_network(dumps_network(net))
    assert again == net
    for a, b in zip(net.layers, again.layers):
        assert a.weights.tobytes() == b.weights.tobytes()
        assert a.bias.tobytes() == b.bias.tobytes()
    assert dumps_network(again) == dumps_network(net)


def test_save_to_file_and_stream(tmp_path, net222):
    save_network(net222, tmp_path / "n.json")
    buf = io.StringIO()
    save_network(net222, buf)
    assert (tmp_path / "n.json").read_text() == buf.getvalue()
    assert load_network(tmp_path / "n.json") == net222
    assert json.loads(buf.getvalue())["pins"] == []


def test_nnet_reference_file(data_dir):
    net = load_network(data_dir / "tiny.nnet")
    assert net.input_dim == 2
    assert net.hidden_sizes == [3]
    assert net.output_dim == 2
    # hand evaluation with explicit normalization, independent of the folding
    x = np.array([7.0, 0.5])
    xn = (x - np.array([5.0, 0.0])) / np.array([10.0, 2.0])
    W0 = np.array([[1.0, -0.5], [0.25, 2.0], [-1.5, 1.0]])
    b0 = np.array([0.1, -0.2, 0.3])
    W1 = np.array([[1.0, 0.5, -1.0], [-0.75, 1.25, 0.5]])
    b1 = np.array([0.05, -0.05])
    raw = W1 @ np.maximum(W0 @ xn + b0, 0) + b1
    np.testing.assert_allclose(forward(net, x)[0], raw * 4.0 + 1.0, rtol=1e-12)


def test_nnet_truncated_file_reports_location(tmp_path, data_dir):
    lines = (data_dir / "tiny.nnet").read_text().splitlines()
    (tmp_path / "cut.nnet").write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(FormatError) as exc:
        load_network(tmp_path / "cut.nnet")
    assert "line" in str(exc.value)
