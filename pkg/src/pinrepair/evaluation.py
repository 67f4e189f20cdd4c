"""Repair quality metrics: fidelity on synthesized data, relative accuracy, local accuracy."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from pinrepair.model import FormatError, Network, predict
from pinrepair.piecewise import PiecewiseModel, dispatch_batch
from pinrepair.property import Box, Property, satisfied_batch

MAX_REJECTS = 1000
PROBE_WINDOW = 10_000
MIN_ACCEPT_RATE = 1e-4


class InfeasibleSpec(RuntimeError):
    """The output constraint is (almost) never met on draws from the spec."""


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError(f"inputs {X.shape} and labels {y.shape} do not line up")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for label, row in zip(self.labels, self.inputs):
                w.writerow([int(label), *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path) -> Dataset:
        labels, rows = [], []
        with open(path, newline="") as fh:
            for lineno, rec in enumerate(csv.reader(fh), start=1):
                if not rec:
                    continue
                try:
                    labels.append(int(rec[0]))
                    rows.append([float(v) for v in rec[1:]])
                except ValueError:
                    raise FormatError("expected label,feature_0,...", f"{path}:{lineno}") from None
                if rows and len(rows[-1]) != len(rows[0]):
                    raise FormatError("row width differs from the first row", f"{path}:{lineno}")
        if not rows:
            raise FormatError("empty dataset", str(path))
        return cls(np.array(rows), np.array(labels))


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    lower: np.ndarray
    upper: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=np.float64).reshape(-1) for a in (self.lower, self.upper, self.mean, self.std)]
        lo, hi, mu, sd = arrs
        if not (lo.shape == hi.shape == mu.shape == sd.shape):
            raise ValueError("gaussian spec fields must have equal length")
        if (lo > mu).any() or (mu > hi).any():
            raise ValueError("means must lie inside [lower, upper]")
        if not (sd > 0).all():
            raise ValueError("standard deviations must be positive")
        for name, a in zip(("lower", "upper", "mean", "std"), arrs):
            object.__setattr__(self, name, a)

    @classmethod
    def from_box(cls, box: Box, mean=None, std=None) -> GaussianSpec:
        mu = box.center if mean is None else mean
        sd = np.where(box.widths > 0, box.widths / 4.0, 1.0) if std is None else std
        return cls(box.lower, box.upper, mu, sd)


def truncated_gaussian(spec: GaussianSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection sampling per coordinate; a coordinate still outside its range
    after MAX_REJECTS redraws falls back to a uniform draw."""
    shape = (n, spec.mean.size)
    X = rng.normal(spec.mean, spec.std, size=shape)
    fixed = spec.lower == spec.upper
    X[:, fixed] = spec.lower[fixed]
    for _ in range(MAX_REJECTS):
        bad = (X < spec.lower) | (X > spec.upper)
        if not bad.any():
            return X
        X[bad] = rng.normal(np.broadcast_to(spec.mean, shape)[bad], np.broadcast_to(spec.std, shape)[bad])
    bad = (X < spec.lower) | (X > spec.upper)
    X[bad] = rng.uniform(np.broadcast_to(spec.lower, shape)[bad], np.broadcast_to(spec.upper, shape)[bad])
    return X


def synthesize_gaussian(net: Network, prop: Property, spec: GaussianSpec | None, n: int, seed: int = 0) -> Dataset:
    """Draw inputs until ``n`` of them satisfy the output constraint under ``net``;
    labels are ``net``'s predictions."""
    if n < 1:
        raise ValueError("n must be at least 1")
    spec = spec or GaussianSpec.from_box(prop.input)
    rng = np.random.default_rng(seed)
    kept: list[np.ndarray] = []
    n_kept = drawn = 0
    batch = max(1024, n)
    while n_kept < n:
        X = truncated_gaussian(spec, batch, rng)
        ok = satisfied_batch(prop.output, predict(net, X))
        drawn += batch
        kept.append(X[ok])
        n_kept += int(ok.sum())
        if drawn >= PROBE_WINDOW and n_kept / drawn < MIN_ACCEPT_RATE:
            raise InfeasibleSpec(f"only {n_kept} of {drawn} draws satisfy the output constraint")
    X = np.concatenate(kept)[:n]
    return Dataset(X, np.argmax(predict(net, X), axis=1))


def fidelity(orig: Network, repaired: PiecewiseModel, t: Dataset) -> float:
    if len(t) == 0:
        raise ValueError("fidelity needs a nonempty dataset")
    a = np.argmax(predict(orig, t.inputs), axis=1)
    b = np.argmax(dispatch_batch(repaired, t.inputs), axis=1)
    return float(np.mean(a == b))


def accuracy(pred_scores: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(pred_scores, axis=1) == labels))


def accR(orig: Network, repaired: PiecewiseModel, test: Dataset) -> float:
    if len(test) == 0:
        raise ValueError("accR needs a nonempty dataset")
    base_acc = accuracy(predict(orig, test.inputs), test.labels)
    if base_acc == 0.0:
        raise ZeroDivisionError("original model has zero accuracy; ratio undefined")
    return accuracy(dispatch_batch(repaired, test.inputs), test.labels) / base_acc


def local_accuracy(repaired: PiecewiseModel, center, tau, label: int, n: int, seed: int = 0,
                   clip: tuple[float, float] | None = (0.0, 1.0)) -> float:
    """Share of uniform samples from ``[center - tau, center + tau]`` classified as ``label``.

    ``tau`` may be a scalar or a per-dimension radius.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    center = np.asarray(center, dtype=np.float64)
    lo, hi = center - tau, center + tau
    if clip is not None:
        lo, hi = np.clip(lo, *clip), np.clip(hi, *clip)
    X = np.random.default_rng(seed).uniform(lo, hi, size=(n, center.size))
    return float(np.mean(np.argmax(dispatch_batch(repaired, X), axis=1) == label))
