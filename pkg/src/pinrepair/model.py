"""Dense ReLU networks: evaluation, hidden-neuron gradients, pinning, file I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np

ACTIVATIONS = ("relu", "identity")


class FormatError(ValueError):
    """Raised for malformed network/property/model files.

    ``where`` names the offending location (a line number or a field path).
    """

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class NeuronRef(NamedTuple):
    layer: int
    index: int


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        w = _frozen(self.weights, 2)
        b = _frozen(self.bias, 1)
        if w.shape[0] != b.shape[0]:
            raise ValueError(f"weights have {w.shape[0]} rows but bias has {b.shape[0]} entries")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("weights and biases must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class Network:
    """Feed-forward network; hidden layers use ReLU, the last layer is affine.

    ``pins`` maps hidden neurons to constants that replace their activation
    for every input. Treat instances as immutable: :func:`pin` returns a copy.
    """

    layers: tuple[DenseLayer, ...]
    input_dim: int
    pins: Mapping[NeuronRef, float] = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        width = self.input_dim
        for i, layer in enumerate(layers):
            if layer.in_dim != width:
                raise ValueError(f"layer {i} expects input width {layer.in_dim}, previous width is {width}")
            last = i == len(layers) - 1
            if last and layer.activation != "identity":
                raise ValueError("output layer must use identity activation")
            if not last and layer.activation != "relu":
                raise ValueError(f"hidden layer {i} must use relu activation")
            width = layer.out_dim
        object.__setattr__(self, "layers", layers)
        pins = {}
        for ref, value in dict(self.pins).items():
            ref = NeuronRef(int(ref[0]), int(ref[1]))
            _check_ref(layers, ref)
            value = float(value)
            if not math.isfinite(value):
                raise ValueError(f"pin value for {ref} is not finite")
            pins[ref] = value
        object.__setattr__(self, "pins", pins)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def hidden_sizes(self) -> list[int]:
        return [layer.out_dim for layer in self.layers[:-1]]

    def hidden_neurons(self) -> list[NeuronRef]:
        return [NeuronRef(l, i) for l, size in enumerate(self.hidden_sizes) for i in range(size)]

    def num_hidden(self) -> int:
        return sum(self.hidden_sizes)

    def without_pins(self) -> Network:
        return Network(self.layers, self.input_dim)

    def same_weights(self, other: Network) -> bool:
        if len(self.layers) != len(other.layers) or self.input_dim != other.input_dim:
            return False
        return all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return self.same_weights(other) and self.pins == other.pins

    __hash__ = None


def _check_ref(layers, ref: NeuronRef):
    n_hidden = len(layers) - 1
    if not 0 <= ref.layer < n_hidden:
        raise IndexError(f"{ref}: layer must be a hidden layer index in [0, {n_hidden})")
    if not 0 <= ref.index < layers[ref.layer].out_dim:
        raise IndexError(f"{ref}: index out of range for layer of width {layers[ref.layer].out_dim}")


@dataclass(frozen=True, eq=False)
class ActivationTrace:
    """Pre- and post-activation values of every layer for one input."""

    x: np.ndarray
    pre: tuple[np.ndarray, ...]
    post: tuple[np.ndarray, ...]

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]

    def value(self, ref: NeuronRef) -> float:
        return float(self.post[ref.layer][ref.index])


def _pin_arrays(net: Network) -> list[tuple[np.ndarray, np.ndarray]]:
    per_layer: list[tuple[list, list]] = [([], []) for _ in net.layers]
    for ref, value in sorted(net.pins.items()):
        per_layer[ref.layer][0].append(ref.index)
        per_layer[ref.layer][1].append(value)
    return [(np.array(i, dtype=int), np.array(v, dtype=np.float64)) for i, v in per_layer]


def forward(net: Network, x) -> tuple[np.ndarray, ActivationTrace]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ValueError(f"input has shape {x.shape}, network expects ({net.input_dim},)")
    if not np.isfinite(x).all():
        raise ValueError("input must be finite")
    pins = _pin_arrays(net)
    pre, post = [], []
    h = x
    for layer, (idx, vals) in zip(net.layers, pins):
        z = layer.weights @ h + layer.bias
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z.copy()
        if idx.size:
            a[idx] = vals
        pre.append(z)
        post.append(a)
        h = a
    trace = ActivationTrace(x, tuple(pre), tuple(post))
    return post[-1].copy(), trace


def predict(net: Network, X) -> np.ndarray:
    """Batched forward pass; ``X`` has shape (n, input_dim)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != net.input_dim:
        raise ValueError(f"inputs have width {X.shape[1]}, network expects {net.input_dim}")
    pins = _pin_arrays(net)
    H = X
    for layer, (idx, vals) in zip(net.layers, pins):
        Z = H @ layer.weights.T + layer.bias
        if layer.activation == "relu":
            Z = np.maximum(Z, 0.0)
        if idx.size:
            Z[:, idx] = vals
        H = Z
    return H


def _backprop(net: Network, trace: ActivationTrace, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients w.r.t. every layer's post-activation and w.r.t. the input."""
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != (net.output_dim,):
        raise ValueError(f"output gradient has shape {g.shape}, expected ({net.output_dim},)")
    if len(trace.pre) != len(net.layers) or any(
        p.shape != (layer.out_dim,) for p, layer in zip(trace.pre, net.layers)
    ):
        raise ValueError("activation trace does not match the network")
    pins = _pin_arrays(net)
    grads: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    grads[-1] = g
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        gpre = grads[k].copy()
        if layer.activation == "relu":
            gpre[trace.pre[k] <= 0.0] = 0.0
        idx = pins[k][0]
        if idx.size:
            gpre[idx] = 0.0  # a pin is a constant: nothing flows upstream of it
        g_below = layer.weights.T @ gpre
        if k == 0:
            return grads, g_below
        grads[k - 1] = g_below
    raise AssertionError("unreachable")


def backward(net: Network, trace: ActivationTrace, loss_grad_at_output) -> dict[NeuronRef, float]:
    """d(loss)/d(post-activation) for every hidden neuron."""
    grads, _ = _backprop(net, trace, loss_grad_at_output)
    return {
        NeuronRef(l, i): float(grads[l][i])
        for l in range(len(net.layers) - 1)
        for i in range(net.layers[l].out_dim)
    }


def input_gradient(net: Network, trace: ActivationTrace, loss_grad_at_output) -> np.ndarray:
    _, gx = _backprop(net, trace, loss_grad_at_output)
    return gx


def pin(net: Network, o: NeuronRef, value: float) -> Network:
    o = NeuronRef(int(o[0]), int(o[1]))
    _check_ref(net.layers, o)
    pins = dict(net.pins)
    pins[o] = float(value)
    return Network(net.layers, net.input_dim, pins)


def pin_all(net: Network, pins: Iterable[tuple[NeuronRef, float]] | Mapping[NeuronRef, float]) -> Network:
    items = pins.items() if isinstance(pins, Mapping) else pins
    merged = dict(net.pins)
    for ref, value in items:
        ref = NeuronRef(int(ref[0]), int(ref[1]))
        _check_ref(net.layers, ref)
        merged[ref] = float(value)
    return Network(net.layers, net.input_dim, merged)


# --------------------------------------------------------------------------
# serialization

def network_to_dict(net: Network) -> dict:
    return {
        "input_dim": net.input_dim,
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation,
            }
            for layer in net.layers
        ],
        "pins": [
            {"layer": ref.layer, "index": ref.index, "value": value}
            for ref, value in sorted(net.pins.items())
        ],
    }


def _expect(cond: bool, message: str, where: str):
    if not cond:
        raise FormatError(message, where)


def _real_vector(raw, where: str) -> np.ndarray:
    _expect(isinstance(raw, list), "expected a list of numbers", where)
    for j, v in enumerate(raw):
        _expect(
            isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
            f"non-finite or non-numeric value {v!r}",
            f"{where}[{j}]",
        )
    return np.array(raw, dtype=np.float64)


def network_from_dict(data, where: str = "network") -> Network:
    _expect(isinstance(data, dict), "expected an object", where)
    unknown = set(data) - {"input_dim", "layers", "pins"}
    _expect(not unknown, f"unknown keys {sorted(unknown)}", where)
    n_in = data.get("input_dim")
    _expect(isinstance(n_in, int) and not isinstance(n_in, bool) and n_in > 0,
            "input_dim must be a positive integer", f"{where}.input_dim")
    raw_layers = data.get("layers")
    _expect(isinstance(raw_layers, list) and len(raw_layers) > 0,
            "layers must be a nonempty list", f"{where}.layers")
    layers = []
    width = n_in
    for i, raw in enumerate(raw_layers):
        at = f"{where}.layers[{i}]"
        _expect(isinstance(raw, dict), "expected an object", at)
        unknown = set(raw) - {"weights", "bias", "activation"}
        _expect(not unknown, f"unknown keys {sorted(unknown)}", at)
        rows = raw.get("weights")
        _expect(isinstance(rows, list) and len(rows) > 0, "weights must be a nonempty list of rows", f"{at}.weights")
        w = np.stack([_real_vector(r, f"{at}.weights[{j}]") for j, r in enumerate(rows)]) \
            if all(isinstance(r, list) and len(r) == len(rows[0]) for r in rows) else None
        _expect(w is not None, "weight rows have unequal lengths", f"{at}.weights")
        _expect(w.shape[1] == width,
                f"layer {i} weight width {w.shape[1]} does not match incoming width {width}", f"{at}.weights")
        b = _real_vector(raw.get("bias"), f"{at}.bias")
        _expect(b.shape[0] == w.shape[0],
                f"layer {i} bias length {b.shape[0]} does not match {w.shape[0]} outputs", f"{at}.bias")
        last = i == len(raw_layers) - 1
        act = raw.get("activation", "identity" if last else "relu")
        _expect(act in ACTIVATIONS, f"unknown activation {act!r}", f"{at}.activation")
        _expect(act == ("identity" if last else "relu"),
                "hidden layers must be relu and the output layer identity", f"{at}.activation")
        layers.append(DenseLayer(w, b, act))
        width = w.shape[0]
    pins = {}
    for j, p in enumerate(data.get("pins", [])):
        at = f"{where}.pins[{j}]"
        _expect(isinstance(p, dict) and set(p) == {"layer", "index", "value"},
                "pin needs exactly layer, index, value", at)
        ref = NeuronRef(p["layer"], p["index"])
        _expect(isinstance(ref.layer, int) and 0 <= ref.layer < len(layers) - 1,
                "pin layer must address a hidden layer", f"{at}.layer")
        _expect(isinstance(ref.index, int) and 0 <= ref.index < layers[ref.layer].out_dim,
                "pin index out of range", f"{at}.index")
        v = p["value"]
        _expect(isinstance(v, (int, float)) and math.isfinite(v), "pin value must be finite", f"{at}.value")
        pins[ref] = float(v)
    return Network(tuple(layers), n_in, pins)


def load_network(source) -> Network:
    """Load a network from a JSON or NNet file path (or a JSON string / dict)."""
    if isinstance(source, dict):
        return network_from_dict(source)
    if isinstance(source, (str, Path)) and Path(source).suffix.lower() == ".nnet":
        return load_nnet(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text()
    else:
        text = source
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    return network_from_dict(data)


def dumps_network(net: Network) -> str:
    # repr-based float output is the shortest string that round-trips exactly
    return json.dumps(network_to_dict(net), indent=1) + "\n"


def save_network(net: Network, sink) -> None:
    text = dumps_network(net)
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        Path(sink).write_text(text)


# --------------------------------------------------------------------------
# NNet text format (ACAS Xu distribution format)

def _nnet_records(lines: list[str]) -> list[tuple[int, list[float]]]:
    records = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("//"):
            continue
        fields = [f for f in stripped.split(",") if f.strip()]
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise FormatError(f"cannot parse numbers from {stripped!r}", f"line {lineno}") from None
        if not all(math.isfinite(v) for v in values):
            raise FormatError("non-finite value", f"line {lineno}")
        records.append((lineno, values))
    return records


def load_nnet(path) -> Network:
    """Parse an NNet file; input normalization is folded into the first layer
    and output de-normalization into the last one."""
    records = _nnet_records(Path(path).read_text().splitlines())
    pos = 0

    def take(n_values: int | None = None, what: str = "record") -> list[float]:
        nonlocal pos
        if pos >= len(records):
            raise FormatError(f"unexpected end of file while reading {what}", f"line {len(records) and records[-1][0]}")
        lineno, values = records[pos]
        pos += 1
        if n_values is not None and len(values) != n_values:
            raise FormatError(f"{what}: expected {n_values} values, found {len(values)}", f"line {lineno}")
        return values

    header = take(4, "header")
    n_layers, n_in, n_out = (int(v) for v in header[:3])
    sizes = [int(v) for v in take(n_layers + 1, "layer sizes")]
    if sizes[0] != n_in or sizes[-1] != n_out:
        raise FormatError("layer sizes disagree with header input/output sizes", f"line {records[1][0]}")
    take(None, "symmetric flag")
    mins = np.array(take(n_in, "input minimums"))
    maxs = np.array(take(n_in, "input maximums"))
    if (mins > maxs).any():
        raise FormatError("input minimum exceeds maximum", f"line {records[pos - 1][0]}")
    means = np.array(take(n_in + 1, "means"))
    ranges = np.array(take(n_in + 1, "ranges"))
    if (ranges == 0).any():
        raise FormatError("zero normalization range", f"line {records[pos - 1][0]}")

    layers = []
    for k in range(n_layers):
        rows = [take(sizes[k], f"layer {k} weight row") for _ in range(sizes[k + 1])]
        bias = [take(1, f"layer {k} bias")[0] for _ in range(sizes[k + 1])]
        layers.append((np.array(rows), np.array(bias)))
    if pos != len(records):
        raise FormatError("trailing data after the last layer", f"line {records[pos][0]}")

    w0, b0 = layers[0]
    scale = 1.0 / ranges[:n_in]
    layers[0] = (w0 * scale[None, :], b0 - w0 @ (means[:n_in] * scale))
    wl, bl = layers[-1]
    layers[-1] = (wl * ranges[n_in], bl * ranges[n_in] + means[n_in])

    dense = tuple(
        DenseLayer(w, b, "identity" if k == n_layers - 1 else "relu") for k, (w, b) in enumerate(layers)
    )
    return Network(dense, n_in)
