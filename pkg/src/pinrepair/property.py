"""Reachability properties: input boxes, output constraints, box bisection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pinrepair.model import FormatError

SUGAR_FORMS = ("not_argmax", "argmax", "not_argmin", "argmin")


class CannotPartition(ValueError):
    """Raised when bisecting a box whose widths are all zero."""


class UnsupportedForm(ValueError):
    """Raised when a label-form view is requested for a general linear constraint."""


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=np.float64).reshape(-1)
        hi = np.array(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError(f"lower has {lo.size} entries, upper has {hi.size}")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box bounds must be finite")
        if (lo > hi).any():
            bad = int(np.argmax(lo > hi))
            raise ValueError(f"lower[{bad}]={lo[bad]} exceeds upper[{bad}]={hi[bad]}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.upper) / 2.0

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def contains_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)

    def contains_box(self, other: Box) -> bool:
        return bool(np.all(other.lower >= self.lower) and np.all(other.upper <= self.upper))

    def interiors_overlap(self, other: Box) -> bool:
        return bool(np.all(np.maximum(self.lower, other.lower) < np.minimum(self.upper, other.upper)))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    __hash__ = None

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"


@dataclass(frozen=True)
class LinearAssertion:
    """``coeffs . y + bias > 0`` (rel ``gt``) or ``>= 0`` (rel ``ge``)."""

    coeffs: tuple[float, ...]
    bias: float = 0.0
    rel: str = "ge"

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        object.__setattr__(self, "bias", float(self.bias))
        if self.rel not in ("gt", "ge"):
            raise ValueError(f"rel must be 'gt' or 'ge', got {self.rel!r}")
        if not all(math.isfinite(c) for c in self.coeffs) or not math.isfinite(self.bias):
            raise ValueError("assertion coefficients must be finite")

    def value(self, y) -> float:
        return float(np.dot(self.coeffs, y) + self.bias)

    def holds(self, y) -> bool:
        v = self.value(y)
        return v > 0.0 if self.rel == "gt" else v >= 0.0

    def to_dict(self) -> dict:
        return {"coeffs": list(self.coeffs), "bias": self.bias, "rel": self.rel}


Disjuncts = tuple[tuple[LinearAssertion, ...], ...]


@dataclass(frozen=True)
class OutputConstraint:
    """A disjunction of conjunctions of linear assertions over output scores.

    Label forms such as ``not_argmax(i)`` keep their sugar so they can be
    expanded for any output width and serialized back unchanged.
    """

    disjuncts: Disjuncts | None = None
    sugar: tuple[str, int] | None = None

    def __post_init__(self):
        if self.disjuncts is None and self.sugar is None:
            raise ValueError("output constraint needs disjuncts or a label form")
        if self.sugar is not None:
            kind, label = self.sugar
            if kind not in SUGAR_FORMS:
                raise ValueError(f"unknown label form {kind!r}")
            object.__setattr__(self, "sugar", (kind, int(label)))
        if self.disjuncts is not None:
            ds = tuple(tuple(conj) for conj in self.disjuncts)
            if not ds or any(len(c) == 0 for c in ds):
                raise ValueError("need at least one disjunct, each with at least one assertion")
            widths = {len(a.coeffs) for c in ds for a in c}
            if len(widths) != 1:
                raise ValueError("assertions disagree on the number of outputs")
            object.__setattr__(self, "disjuncts", ds)

    def expand(self, n_labels: int) -> Disjuncts:
        if self.disjuncts is not None:
            width = len(self.disjuncts[0][0].coeffs)
            if width != n_labels:
                raise ValueError(f"constraint is over {width} outputs, network has {n_labels}")
            return self.disjuncts
        return desugar(self.sugar[0], self.sugar[1], n_labels).disjuncts

    def to_dict(self) -> dict:
        if self.sugar is not None:
            return {self.sugar[0]: self.sugar[1]}
        return {"any_of": [{"all_of": [a.to_dict() for a in conj]} for conj in self.disjuncts]}


@dataclass(frozen=True, eq=False)
class Property:
    input: Box
    output: OutputConstraint
    name: str = "property"

    def with_input(self, box: Box) -> Property:
        return Property(box, self.output, self.name)


@dataclass(frozen=True)
class LabelSpec:
    """Labels whose softmax share drives the violation loss, with their signs.

    sign +1: the label's score should shrink; -1: it should grow.
    """

    labels: tuple[int, ...]
    signs: tuple[int, ...]


def _unit_diff(n: int, plus: int, minus: int) -> tuple[float, ...]:
    c = [0.0] * n
    c[plus] += 1.0
    c[minus] -= 1.0
    return tuple(c)


def desugar(kind: str, label: int, n_labels: int) -> OutputConstraint:
    if kind not in SUGAR_FORMS:
        raise ValueError(f"unknown label form {kind!r}")
    if n_labels < 2:
        raise ValueError("label forms need at least two outputs")
    if not 0 <= label < n_labels:
        raise ValueError(f"label {label} out of range for {n_labels} outputs")
    others = [j for j in range(n_labels) if j != label]
    if kind == "not_argmax":
        ds = tuple((LinearAssertion(_unit_diff(n_labels, j, label), 0.0, "ge"),) for j in others)
    elif kind == "argmax":
        ds = (tuple(LinearAssertion(_unit_diff(n_labels, label, j), 0.0, "gt") for j in others),)
    elif kind == "not_argmin":
        ds = tuple((LinearAssertion(_unit_diff(n_labels, label, j), 0.0, "ge"),) for j in others)
    else:
        ds = (tuple(LinearAssertion(_unit_diff(n_labels, j, label), 0.0, "gt") for j in others),)
    return OutputConstraint(ds, (kind, label))


def satisfied(omega: OutputConstraint, y) -> bool:
    y = np.asarray(y, dtype=np.float64)
    return any(all(a.holds(y) for a in conj) for conj in omega.expand(y.size))


def _conj_matrices(conj) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    C = np.array([a.coeffs for a in conj])
    b = np.array([a.bias for a in conj])
    strict = np.array([a.rel == "gt" for a in conj])
    return C, b, strict


def satisfied_batch(omega: OutputConstraint, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    ok = np.zeros(Y.shape[0], dtype=bool)
    for conj in omega.expand(Y.shape[1]):
        C, b, strict = _conj_matrices(conj)
        V = Y @ C.T + b
        ok |= np.all(np.where(strict, V > 0.0, V >= 0.0), axis=1)
    return ok


def satisfaction_margin(omega: OutputConstraint, y) -> tuple[float, np.ndarray]:
    """max over disjuncts of min over assertions of ``coeffs . y + bias``,
    with a subgradient w.r.t. ``y`` (first maximizer / minimizer on ties)."""
    y = np.asarray(y, dtype=np.float64)
    best, grad = -math.inf, None
    for conj in omega.expand(y.size):
        vals = [a.value(y) for a in conj]
        k = int(np.argmin(vals))
        if vals[k] > best:
            best, grad = vals[k], np.array(conj[k].coeffs)
    return best, grad


def label_spec(omega: OutputConstraint) -> LabelSpec:
    if omega.sugar is None:
        raise UnsupportedForm("violation loss needs a label-form output constraint")
    kind, label = omega.sugar
    sign = 1 if kind in ("not_argmax", "argmin") else -1
    return LabelSpec((label,), (sign,))


def bisect(phi: Box) -> tuple[Box, Box]:
    widths = phi.widths
    if not (widths > 0).any():
        raise CannotPartition("box has zero width in every dimension")
    d = int(np.argmax(widths))  # first index on ties
    mid = phi.lower[d] + widths[d] / 2.0
    upper1 = phi.upper.copy()
    upper1[d] = mid
    lower2 = phi.lower.copy()
    lower2[d] = mid
    return Box(phi.lower, upper1), Box(lower2, phi.upper)


def robustness_property(x, label: int, tau: float, clip: tuple[float, float] | None = (0.0, 1.0),
                        name: str = "robustness") -> Property:
    """Local robustness: every input within ``tau`` (L-inf) of ``x`` keeps ``label``."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x - tau, x + tau
    if clip is not None:
        lo, hi = np.clip(lo, *clip), np.clip(hi, *clip)
    return Property(Box(lo, hi), OutputConstraint(sugar=("argmax", int(label))), name)


# --------------------------------------------------------------------------
# JSON

def _number_list(raw, where: str) -> list[float]:
    if not isinstance(raw, list) or not raw:
        raise FormatError("expected a nonempty list of numbers", where)
    for j, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise FormatError(f"non-finite or non-numeric value {v!r}", f"{where}[{j}]")
    return [float(v) for v in raw]


def _check_keys(obj, allowed: set, where: str, required: set | None = None):
    if not isinstance(obj, dict):
        raise FormatError("expected an object", where)
    unknown = set(obj) - allowed
    if unknown:
        raise FormatError(f"unknown keys {sorted(unknown)}", where)
    missing = (required or set()) - set(obj)
    if missing:
        raise FormatError(f"missing keys {sorted(missing)}", where)


def box_from_dict(raw, where: str = "input") -> Box:
    _check_keys(raw, {"lower", "upper"}, where, {"lower", "upper"})
    lo = _number_list(raw["lower"], f"{where}.lower")
    hi = _number_list(raw["upper"], f"{where}.upper")
    if len(lo) != len(hi):
        raise FormatError(f"lower has {len(lo)} entries, upper has {len(hi)}", where)
    for i, (a, b) in enumerate(zip(lo, hi)):
        if a > b:
            raise FormatError(f"lower {a} exceeds upper {b}", f"{where}[{i}]")
    return Box(lo, hi)


def output_from_dict(raw, where: str = "output") -> OutputConstraint:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise FormatError("expected an object with exactly one key", where)
    (key, value), = raw.items()
    if key in SUGAR_FORMS:
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise FormatError("label must be a nonnegative integer", f"{where}.{key}")
        return OutputConstraint(sugar=(key, value))
    if key != "any_of":
        raise FormatError(f"unknown output form {key!r}", where)
    if not isinstance(value, list) or not value:
        raise FormatError("any_of must be a nonempty list", f"{where}.any_of")
    disjuncts = []
    width = None
    for i, conj in enumerate(value):
        at = f"{where}.any_of[{i}]"
        _check_keys(conj, {"all_of"}, at, {"all_of"})
        if not isinstance(conj["all_of"], list) or not conj["all_of"]:
            raise FormatError("all_of must be a nonempty list", f"{at}.all_of")
        atoms = []
        for j, a in enumerate(conj["all_of"]):
            aat = f"{at}.all_of[{j}]"
            _check_keys(a, {"coeffs", "bias", "rel"}, aat, {"coeffs"})
            coeffs = _number_list(a["coeffs"], f"{aat}.coeffs")
            if width is None:
                width = len(coeffs)
            elif len(coeffs) != width:
                raise FormatError(f"expected {width} coefficients, found {len(coeffs)}", f"{aat}.coeffs")
            bias = a.get("bias", 0.0)
            if isinstance(bias, bool) or not isinstance(bias, (int, float)) or not math.isfinite(bias):
                raise FormatError("bias must be a finite number", f"{aat}.bias")
            rel = a.get("rel", "ge")
            if rel not in ("gt", "ge"):
                raise FormatError(f"rel must be 'gt' or 'ge', got {rel!r}", f"{aat}.rel")
            atoms.append(LinearAssertion(coeffs, bias, rel))
        disjuncts.append(tuple(atoms))
    return OutputConstraint(tuple(disjuncts))


def property_from_dict(data) -> Property:
    _check_keys(data, {"name", "input", "output"}, "property", {"input", "output"})
    name = data.get("name", "property")
    if not isinstance(name, str):
        raise FormatError("name must be a string", "property.name")
    return Property(box_from_dict(data["input"]), output_from_dict(data["output"]), name)


def property_to_dict(p: Property) -> dict:
    return {"name": p.name, "input": p.input.to_dict(), "output": p.output.to_dict()}


def serialize_property(p: Property) -> str:
    return json.dumps(property_to_dict(p), indent=2) + "\n"


def parse_property(source) -> Property:
    """Parse a property from a path, a JSON string, or an already-decoded dict."""
    if isinstance(source, dict):
        return property_from_dict(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text()
    else:
        text = source
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    return property_from_dict(data)


def check_compatible(prop: Property, input_dim: int, output_dim: int) -> None:
    if prop.input.dim != input_dim:
        raise ValueError(f"property box has {prop.input.dim} dims, network takes {input_dim}")
    prop.output.expand(output_dim)

