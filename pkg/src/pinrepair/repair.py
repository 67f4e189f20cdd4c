"""Gradient-guided repair by neuron pinning, and the partition-then-repair driver."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from pinrepair.cex import CexConfig, find_cex
from pinrepair.model import Network, NeuronRef, backward, forward, pin
from pinrepair.piecewise import Patch, PiecewiseModel
from pinrepair.property import (
    Box,
    CannotPartition,
    LabelSpec,
    OutputConstraint,
    Property,
    UnsupportedForm,
    bisect,
    label_spec,
    satisfied,
)
from pinrepair.verifier import AbstractBounds, check, deeppoly_bounds

log = logging.getLogger(__name__)

VERIFIED_ORIGINAL = "verified_original"
REPAIRED = "repaired"
FAILED = "failed"


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class RepairParams:
    """``alpha`` caps distinct modified neurons (``None``: 5% of hidden neurons,
    rounded up); ``beta`` caps modifications per neuron; ``eta`` is the step size."""

    eta: float = 0.35
    alpha: int | None = None
    beta: int = 50
    timeout: float | None = None  # seconds per region
    max_depth: int = 4
    alpha_frac: float = 0.05

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.alpha is not None and self.alpha < 1:
            raise ValueError("alpha must be at least 1")
        if self.beta < 1:
            raise ValueError("beta must be at least 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")
        if self.alpha_frac < 0:
            raise ValueError("alpha_frac must be nonnegative")

    def alpha_for(self, net: Network) -> int:
        if self.alpha is not None:
            return self.alpha
        return alpha_from_fraction(self.alpha_frac, net.num_hidden())


def alpha_from_fraction(frac: float, n_hidden: int) -> int:
    # round before ceil so that e.g. 0.05 * 300 does not become 16
    return max(1, math.ceil(round(frac * n_hidden, 9)))


# --------------------------------------------------------------------------
# losses: both return (loss, d loss / d y)

def softmax_label_loss(y, spec: LabelSpec) -> tuple[float, np.ndarray]:
    """Signed softmax share of the labels in ``spec``."""
    y = np.asarray(y, dtype=np.float64)
    e = np.exp(y - y.max())
    s = e / e.sum()
    loss = 0.0
    grad = np.zeros_like(y)
    for i, sign in zip(spec.labels, spec.signs):
        loss += sign * s[i]
        # d s_i / d y_k = s_i (delta_ik - s_k)
        g = -s[i] * s
        g[i] += s[i]
        grad += sign * g
    return float(loss), grad


def hinge_output_loss(y, omega: OutputConstraint) -> tuple[float, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    best, best_grad = math.inf, None
    for conj in omega.expand(y.size):
        total, grad = 0.0, np.zeros_like(y)
        for a in conj:
            v = a.value(y)
            if v < 0.0:
                total -= v
                grad -= np.asarray(a.coeffs)
        if total < best:
            best, best_grad = total, grad
    return float(best), best_grad


def output_loss(y, omega: OutputConstraint) -> tuple[float, np.ndarray]:
    try:
        spec = label_spec(omega)
    except UnsupportedForm:
        return hinge_output_loss(y, omega)
    return softmax_label_loss(y, spec)


def _scores(net: Network, x) -> np.ndarray:
    y, _ = forward(net, x)
    if not np.isfinite(y).all():
        raise FloatingPointError("network produced non-finite scores")
    return y


def violation_loss(net: Network, x, omega: OutputConstraint) -> tuple[float, np.ndarray]:
    return softmax_label_loss(_scores(net, x), label_spec(omega))


def hinge_loss(net: Network, x, omega: OutputConstraint) -> tuple[float, np.ndarray]:
    return hinge_output_loss(_scores(net, x), omega)


def neuron_gradients(net: Network, x, omega: OutputConstraint) -> tuple[dict[NeuronRef, float], object]:
    y, trace = forward(net, x)
    _, gy = output_loss(y, omega)
    return backward(net, trace, gy), trace


# --------------------------------------------------------------------------
# neuron selection and single-region repair

def select_neuron(gradients: dict[NeuronRef, float], counter: dict[NeuronRef, int], beta: int) -> NeuronRef | None:
    ranked = sorted(gradients, key=lambda o: (-abs(gradients[o]), o.layer, o.index))
    for o in ranked:
        if counter.get(o, 0) < beta:
            return o
    return None


@dataclass
class RepairResult:
    network: Network | None
    counter: dict[NeuronRef, int] = field(default_factory=dict)
    iterations: int = 0
    reason: str = ""

    @property
    def modified_neurons(self) -> int:
        return len(self.counter)


def repair_region(net: Network, phi: Box, omega: OutputConstraint, ct, params: RepairParams,
                  deadline: float | None = None) -> RepairResult:
    """Pin the most responsible neuron, one step at a time, until the region verifies.

    ``result.network`` is ``None`` when the neuron budget, the per-neuron
    budget, or the time budget runs out first.
    """
    ct = np.asarray(ct, dtype=np.float64)
    if not phi.contains(ct):
        raise ContractError("counterexample lies outside the region")
    if satisfied(omega, forward(net, ct)[0]):
        raise ContractError("counterexample does not violate the output constraint")
    alpha = params.alpha_for(net)
    if params.timeout is not None:
        region_deadline = time.monotonic() + params.timeout
        deadline = region_deadline if deadline is None else min(deadline, region_deadline)
    prop = Property(phi, omega)
    base_pins = set(net.pins)
    counter: dict[NeuronRef, int] = {}
    cur = net
    iterations = 0
    while len(counter) < alpha:
        if deadline is not None and time.monotonic() >= deadline:
            return RepairResult(None, counter, iterations, "timeout")
        grads, trace = neuron_gradients(cur, ct, omega)
        o = select_neuron(grads, counter, params.beta)
        if o is None:
            return RepairResult(None, counter, iterations, "no selectable neuron")
        if grads[o] == 0.0:
            # every remaining gradient is zero, so no pin can change the loss
            return RepairResult(None, counter, iterations, "vanishing gradient")
        cur = pin(cur, o, trace.value(o) - params.eta * grads[o])
        iterations += 1
        repaired = satisfied(omega, forward(cur, ct)[0]) and check(cur, prop).verified
        counter[o] = counter.get(o, 0) + 1
        if repaired:
            log.debug("region repaired after %d steps with %d pins", iterations, len(set(cur.pins) - base_pins))
            return RepairResult(cur, counter, iterations)
    return RepairResult(None, counter, iterations, "neuron budget exhausted")


# --------------------------------------------------------------------------
# partition-then-repair

@dataclass
class RegionOutcome:
    region: Box
    status: str
    depth: int
    network: Network | None = None
    reason: str = ""
    modified_neurons: int = 0
    iterations: int = 0
    elapsed: float = 0.0
    cex: np.ndarray | None = None

    def to_dict(self, timing: bool = False) -> dict:
        out = {
            "box": self.region.to_dict(),
            "status": self.status,
            "depth": self.depth,
            "modified_neurons": self.modified_neurons,
            "iterations": self.iterations,
        }
        if self.reason:
            out["reason"] = self.reason
        if self.cex is not None:
            out["cex"] = [float(v) for v in self.cex]
        if timing:
            out["elapsed_ms"] = round(self.elapsed * 1000.0, 3)
        return out


@dataclass
class RepairReport:
    property_name: str
    outcomes: list[RegionOutcome]
    params: RepairParams
    alpha: int

    @property
    def repaired(self) -> list[RegionOutcome]:
        return [o for o in self.outcomes if o.status == REPAIRED]

    @property
    def failed(self) -> list[RegionOutcome]:
        return [o for o in self.outcomes if o.status == FAILED]

    @property
    def success_rate(self) -> float:
        """Fraction of partitions needing repair that were repaired (1.0 if none needed it)."""
        needed = len(self.repaired) + len(self.failed)
        return 1.0 if needed == 0 else len(self.repaired) / needed

    @property
    def avg_modified(self) -> float | None:
        rep = self.repaired
        return None if not rep else sum(o.modified_neurons for o in rep) / len(rep)

    @property
    def all_ok(self) -> bool:
        return not self.failed

    def to_dict(self, timing: bool = False) -> dict:
        return {
            "property": self.property_name,
            "params": {
                "eta": self.params.eta,
                "alpha": self.alpha,
                "beta": self.params.beta,
                "max_depth": self.params.max_depth,
            },
            "regions": [o.to_dict(timing) for o in self.outcomes],
            "aggregate": {
                "partitions": len(self.outcomes),
                "verified_original": sum(o.status == VERIFIED_ORIGINAL for o in self.outcomes),
                "repaired": len(self.repaired),
                "failed": len(self.failed),
                "success_rate": self.success_rate,
                "avg_modified": self.avg_modified,
            },
        }


def _partition(net: Network, prop: Property, max_depth: int, deadline: float | None) -> list[tuple[Box, int, str]]:
    """Depth-first split of the property box; leaves tagged 'ok', 'repair' or 'timeout'."""
    leaves: list[tuple[Box, int, str]] = []

    def visit(box: Box, depth: int, parent: AbstractBounds | None):
        if deadline is not None and time.monotonic() >= deadline:
            leaves.append((box, depth, "timeout"))
            return
        bounds = deeppoly_bounds(net, box, prior=parent)
        if check(net, prop.with_input(box), bounds).verified:
            leaves.append((box, depth, "ok"))
            return
        if depth < max_depth:
            try:
                left, right = bisect(box)
            except CannotPartition:
                leaves.append((box, depth, "repair"))
                return
            visit(left, depth + 1, bounds)
            visit(right, depth + 1, bounds)
            return
        leaves.append((box, depth, "repair"))

    visit(prop.input, 0, None)
    return leaves


def _repair_leaf(net: Network, box: Box, depth: int, omega: OutputConstraint, params: RepairParams,
                 cex_cfg: CexConfig, deadline: float | None) -> RegionOutcome:
    t0 = time.monotonic()
    if deadline is not None and t0 >= deadline:
        return RegionOutcome(box, FAILED, depth, reason="global timeout")
    sub = Property(box, omega)
    ct = find_cex(net, sub, cex_cfg)
    if ct is None:
        # unverified but no counterexample found: reported as an alarm region
        return RegionOutcome(box, FAILED, depth, reason="no counterexample found",
                             elapsed=time.monotonic() - t0)
    res = repair_region(net, box, omega, ct, params, deadline)
    elapsed = time.monotonic() - t0
    if res.network is None:
        return RegionOutcome(box, FAILED, depth, reason=res.reason, modified_neurons=len(res.counter),
                             iterations=res.iterations, elapsed=elapsed, cex=ct)
    changed = sum(1 for o, v in res.network.pins.items() if net.pins.get(o) != v)
    return RegionOutcome(box, REPAIRED, depth, network=res.network, modified_neurons=changed,
                         iterations=res.iterations, elapsed=elapsed, cex=ct)


def _repair_leaf_star(args):
    return _repair_leaf(*args)


def overall(net: Network, prop: Property, params: RepairParams | None = None,
            cex_cfg: CexConfig | None = None, jobs: int = 1,
            deadline: float | None = None) -> tuple[PiecewiseModel, RepairReport]:
    """Verify, split unverified boxes down to ``max_depth``, repair the leaves.

    Outcomes are reported in depth-first partition order regardless of
    ``jobs``; each leaf's counterexample search is seeded by its position.
    """
    params = params or RepairParams()
    cex_cfg = cex_cfg or CexConfig()
    leaves = _partition(net, prop, params.max_depth, deadline)
    tasks = []
    for ordinal, (box, depth, tag) in enumerate(leaves):
        if tag == "repair":
            cfg = replace(cex_cfg, seed=cex_cfg.seed + ordinal)
            tasks.append((ordinal, (net, box, depth, prop.output, params, cfg, deadline)))

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_repair_leaf_star, [t for _, t in tasks]))
    else:
        results = [_repair_leaf(*t) for _, t in tasks]
    repaired_at = {ordinal: r for (ordinal, _), r in zip(tasks, results)}

    outcomes = []
    for ordinal, (box, depth, tag) in enumerate(leaves):
        if tag == "ok":
            outcomes.append(RegionOutcome(box, VERIFIED_ORIGINAL, depth))
        elif tag == "timeout":
            outcomes.append(RegionOutcome(box, FAILED, depth, reason="global timeout"))
        else:
            outcomes.append(repaired_at[ordinal])

    patches = []
    for o in outcomes:
        if o.status == REPAIRED:
            delta = tuple(sorted((r, v) for r, v in o.network.pins.items() if net.pins.get(r) != v))
            patches.append(Patch(o.region, delta))
    report = RepairReport(prop.name, outcomes, params, params.alpha_for(net))
    return PiecewiseModel(net, tuple(patches)), report
