"""Sound bound propagation (interval and DeepPoly-style) and property checking.

DeepPoly keeps, for every neuron, an affine lower and upper bound in terms of
the previous layer's post-activations. Concrete bounds come from substituting
these expressions back to the input box. ReLUs whose pre-activation straddles
zero get the triangle upper bound and a 0/x lower bound picked by area.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pinrepair.model import Network, _pin_arrays
from pinrepair.property import Box, LinearAssertion, OutputConstraint, Property

Affine = tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]  # A_lo, a_lo, A_hi, a_hi


@dataclass(frozen=True, eq=False)
class AbstractBounds:
    pre_lower: list[np.ndarray]
    pre_upper: list[np.ndarray]
    post_lower: list[np.ndarray]
    post_upper: list[np.ndarray]
    box: Box
    # per layer: post >= A_lo @ prev_post + a_lo and post <= A_hi @ prev_post + a_hi
    symbolic: list[Affine] | None = None

    @property
    def output_lower(self) -> np.ndarray:
        return self.post_lower[-1]

    @property
    def output_upper(self) -> np.ndarray:
        return self.post_upper[-1]

    def to_records(self) -> list[dict]:
        return [
            {
                "layer": k,
                "neuron": i,
                "pre": [float(self.pre_lower[k][i]), float(self.pre_upper[k][i])],
                "post": [float(self.post_lower[k][i]), float(self.post_upper[k][i])],
            }
            for k in range(len(self.pre_lower))
            for i in range(self.pre_lower[k].size)
        ]


@dataclass(frozen=True, eq=False)
class Verdict:
    verified: bool
    bounds: AbstractBounds | None = None

    @property
    def status(self) -> str:
        return "verified" if self.verified else "unknown"

    def __bool__(self):
        return self.verified


def _check_box(net: Network, phi: Box):
    if phi.dim != net.input_dim:
        raise ValueError(f"box has {phi.dim} dims, network takes {net.input_dim}")


def _affine_interval(W, b, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    Wp, Wn = np.maximum(W, 0.0), np.minimum(W, 0.0)
    return Wp @ lo + Wn @ hi + b, Wp @ hi + Wn @ lo + b


def _activate_interval(layer, pins, lo, hi):
    if layer.activation == "relu":
        plo, phi_ = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    else:
        plo, phi_ = lo.copy(), hi.copy()
    idx, vals = pins
    if idx.size:
        plo[idx] = vals
        phi_[idx] = vals
    return plo, phi_


def interval_bounds(net: Network, phi: Box) -> AbstractBounds:
    _check_box(net, phi)
    pins = _pin_arrays(net)
    lo, hi = phi.lower, phi.upper
    pre_l, pre_u, post_l, post_u = [], [], [], []
    for layer, p in zip(net.layers, pins):
        zl, zu = _affine_interval(layer.weights, layer.bias, lo, hi)
        lo, hi = _activate_interval(layer, p, zl, zu)
        pre_l.append(zl)
        pre_u.append(zu)
        post_l.append(lo)
        post_u.append(hi)
    return AbstractBounds(pre_l, pre_u, post_l, post_u, phi)


def _backsubstitute(C: np.ndarray, d: np.ndarray, symbolic: list[Affine], phi: Box) -> tuple[np.ndarray, np.ndarray]:
    """Bounds of ``C @ post_k + d`` over ``phi`` where k = len(symbolic) - 1."""
    Cl, dl = C, d.astype(np.float64)
    Cu, du = C, d.astype(np.float64)
    for A_lo, a_lo, A_hi, a_hi in reversed(symbolic):
        Clp, Cln = np.maximum(Cl, 0.0), np.minimum(Cl, 0.0)
        dl = dl + Clp @ a_lo + Cln @ a_hi
        Cl = Clp @ A_lo + Cln @ A_hi
        Cup, Cun = np.maximum(Cu, 0.0), np.minimum(Cu, 0.0)
        du = du + Cup @ a_hi + Cun @ a_lo
        Cu = Cup @ A_hi + Cun @ A_lo
    lower = np.maximum(Cl, 0.0) @ phi.lower + np.minimum(Cl, 0.0) @ phi.upper + dl
    upper = np.maximum(Cu, 0.0) @ phi.upper + np.minimum(Cu, 0.0) @ phi.lower + du
    return lower, upper


def _relu_relaxation(W, b, lo, hi, pins) -> Affine:
    """Affine bounds of relu(W @ prev + b) given pre-activation bounds [lo, hi]."""
    lam_lo = np.zeros_like(lo)
    lam_hi = np.zeros_like(lo)
    mu_hi = np.zeros_like(lo)
    active = lo >= 0.0
    unstable = (lo < 0.0) & (hi > 0.0)
    lam_lo[active] = 1.0
    lam_hi[active] = 1.0
    s = hi[unstable] / (hi[unstable] - lo[unstable])
    lam_hi[unstable] = s
    mu_hi[unstable] = -s * lo[unstable]
    # lower bound y >= x when that triangle is the smaller-area choice
    lam_lo[unstable & (hi >= -lo)] = 1.0
    mu_lo = np.zeros_like(lo)
    idx, vals = pins
    if idx.size:
        lam_lo[idx] = lam_hi[idx] = 0.0
        mu_lo[idx] = mu_hi[idx] = vals
    A_lo = lam_lo[:, None] * W
    A_hi = lam_hi[:, None] * W
    return A_lo, lam_lo * b + mu_lo, A_hi, lam_hi * b + mu_hi


def deeppoly_bounds(net: Network, phi: Box, prior: AbstractBounds | None = None) -> AbstractBounds:
    """DeepPoly bounds over ``phi``.

    ``prior`` may hold bounds of the same network over a box enclosing
    ``phi``; concrete pre-activation bounds are intersected with it, so the
    result never exceeds the enclosing box's bounds.
    """
    _check_box(net, phi)
    if prior is not None and not prior.box.contains_box(phi):
        raise ValueError("prior bounds must come from a box enclosing phi")
    pins = _pin_arrays(net)
    symbolic: list[Affine] = []
    pre_l, pre_u, post_l, post_u = [], [], [], []
    lo, hi = phi.lower, phi.upper
    for k, (layer, p) in enumerate(zip(net.layers, pins)):
        W, b = layer.weights, layer.bias
        zl, zu = _affine_interval(W, b, lo, hi)
        if symbolic:
            sl, su = _backsubstitute(W, b, symbolic, phi)
            # both are sound; keeping the tighter endpoint makes the result
            # never looser than plain interval propagation
            zl, zu = np.maximum(zl, sl), np.minimum(zu, su)
        if prior is not None:
            zl, zu = np.maximum(zl, prior.pre_lower[k]), np.minimum(zu, prior.pre_upper[k])
            zu = np.maximum(zu, zl)  # guard against rounding inverting a tight pair
        if layer.activation == "relu":
            sym = _relu_relaxation(W, b, zl, zu, p)
        else:
            sym = (W, b, W, b)
        lo, hi = _activate_interval(layer, p, zl, zu)
        symbolic.append(sym)
        pre_l.append(zl)
        pre_u.append(zu)
        post_l.append(lo)
        post_u.append(hi)
    return AbstractBounds(pre_l, pre_u, post_l, post_u, phi, symbolic)


def bound_output_expr(net: Network, phi: Box, assertion: LinearAssertion,
                      bounds: AbstractBounds | None = None) -> tuple[float, float]:
    """Sound bounds on ``coeffs . y + bias`` for ``x`` in ``phi``."""
    c = np.asarray(assertion.coeffs, dtype=np.float64)
    if c.size != net.output_dim:
        raise ValueError(f"assertion is over {c.size} outputs, network has {net.output_dim}")
    if bounds is None:
        bounds = deeppoly_bounds(net, phi)
    lo, hi = _expr_bounds(c[None, :], np.array([assertion.bias]), bounds)
    return float(lo[0]), float(hi[0])


def _expr_bounds(C: np.ndarray, d: np.ndarray, bounds: AbstractBounds) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = _backsubstitute(C, d, bounds.symbolic, bounds.box)
    # cancellation in the symbolic route is what matters; the concrete route
    # only ever tightens
    cl, cu = _affine_interval(C, d, bounds.output_lower, bounds.output_upper)
    return np.maximum(lo, cl), np.minimum(hi, cu)


def check(net: Network, prop: Property, bounds: AbstractBounds | None = None) -> Verdict:
    if bounds is None:
        bounds = deeppoly_bounds(net, prop.input)
    if bounds.box != prop.input:
        raise ValueError("bounds were computed for a different box")
    if bounds.symbolic is None:
        raise ValueError("check needs DeepPoly bounds")
    for conj in prop.output.expand(net.output_dim):
        C = np.array([a.coeffs for a in conj])
        d = np.array([a.bias for a in conj])
        lo, _ = _expr_bounds(C, d, bounds)
        strict = np.array([a.rel == "gt" for a in conj])
        if np.all(np.where(strict, lo > 0.0, lo >= 0.0)):
            return Verdict(True, bounds)
    return Verdict(False, bounds)


def verify_region(net: Network, phi: Box, omega: OutputConstraint) -> Verdict:
    return check(net, Property(phi, omega))
