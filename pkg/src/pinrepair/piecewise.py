"""Region-dispatched repaired models.

A :class:`PiecewiseModel` shares one base network across all patches; each
patch only records the pins that apply inside its box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pinrepair.model import (
    FormatError,
    Network,
    NeuronRef,
    forward,
    load_network,
    network_from_dict,
    network_to_dict,
    pin_all,
    predict,
)
from pinrepair.property import Box, box_from_dict


@dataclass(frozen=True, eq=False)
class Patch:
    region: Box
    pins: tuple[tuple[NeuronRef, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "pins", tuple((NeuronRef(int(r[0]), int(r[1])), float(v)) for r, v in self.pins)
        )

    def to_dict(self) -> dict:
        return {
            "box": self.region.to_dict(),
            "pins": [{"layer": r.layer, "index": r.index, "value": v} for r, v in self.pins],
        }


class OverlappingPatches(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PiecewiseModel:
    base: Network
    patches: tuple[Patch, ...] = ()

    def __post_init__(self):
        patches = tuple(self.patches)
        for i, p in enumerate(patches):
            if p.region.dim != self.base.input_dim:
                raise ValueError(f"patch {i} region has {p.region.dim} dims, base takes {self.base.input_dim}")
            for j in range(i):
                if patches[j].region.interiors_overlap(p.region):
                    raise OverlappingPatches(f"patches {j} and {i} have overlapping interiors")
        object.__setattr__(self, "patches", patches)
        # validates pin addresses up front
        object.__setattr__(self, "_nets", tuple(pin_all(self.base, p.pins) for p in patches))

    def network_for(self, x) -> Network:
        for p, net in zip(self.patches, self._nets):
            if p.region.contains(x):
                return net
        return self.base

    def patch_network(self, k: int) -> Network:
        return self._nets[k]


def dispatch(pw: PiecewiseModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (pw.base.input_dim,):
        raise ValueError(f"input has shape {x.shape}, model expects ({pw.base.input_dim},)")
    y, _ = forward(pw.network_for(x), x)
    return y


def dispatch_batch(pw: PiecewiseModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != pw.base.input_dim:
        raise ValueError(f"inputs have shape {X.shape}, model expects (n, {pw.base.input_dim})")
    out = np.empty((X.shape[0], pw.base.output_dim))
    todo = np.ones(X.shape[0], dtype=bool)
    for p, net in zip(pw.patches, pw._nets):
        hit = todo & p.region.contains_batch(X)
        if hit.any():
            out[hit] = predict(net, X[hit])
            todo &= ~hit
    if todo.any():
        out[todo] = predict(pw.base, X[todo])
    return out


def piecewise_to_dict(pw: PiecewiseModel, base_path: str | None = None) -> dict:
    base = {"path": base_path} if base_path is not None else network_to_dict(pw.base)
    return {"base": base, "patches": [p.to_dict() for p in pw.patches]}


def dumps_piecewise(pw: PiecewiseModel, base_path: str | None = None) -> str:
    return json.dumps(piecewise_to_dict(pw, base_path), indent=1) + "\n"


def save_piecewise(pw: PiecewiseModel, sink, base_path: str | None = None) -> None:
    """Write ``pw`` as JSON; with ``base_path`` the base is stored by reference."""
    text = dumps_piecewise(pw, base_path)
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        Path(sink).write_text(text)


def piecewise_from_dict(data, relative_to: Path | None = None) -> PiecewiseModel:
    if not isinstance(data, dict) or set(data) != {"base", "patches"}:
        raise FormatError("expected exactly the keys base and patches", "piecewise")
    raw_base = data["base"]
    if isinstance(raw_base, dict) and set(raw_base) == {"path"}:
        path = Path(raw_base["path"])
        if not path.is_absolute() and relative_to is not None:
            path = relative_to / path
        base = load_network(path)
    else:
        base = network_from_dict(raw_base, "piecewise.base")
    if not isinstance(data["patches"], list):
        raise FormatError("patches must be a list", "piecewise.patches")
    patches = []
    for i, raw in enumerate(data["patches"]):
        at = f"piecewise.patches[{i}]"
        if not isinstance(raw, dict) or set(raw) != {"box", "pins"}:
            raise FormatError("patch needs exactly box and pins", at)
        region = box_from_dict(raw["box"], f"{at}.box")
        pins = []
        for j, p in enumerate(raw["pins"]):
            if not isinstance(p, dict) or set(p) != {"layer", "index", "value"}:
                raise FormatError("pin needs exactly layer, index, value", f"{at}.pins[{j}]")
            pins.append((NeuronRef(p["layer"], p["index"]), p["value"]))
        patches.append(Patch(region, tuple(pins)))
    try:
        return PiecewiseModel(base, tuple(patches))
    except OverlappingPatches as exc:
        raise FormatError(str(exc), "piecewise.patches") from None
    except (IndexError, ValueError) as exc:
        raise FormatError(str(exc), "piecewise.patches") from None


def load_piecewise(source) -> PiecewiseModel:
    if isinstance(source, dict):
        return piecewise_from_dict(source)
    path = Path(source)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    return piecewise_from_dict(data, path.parent)
