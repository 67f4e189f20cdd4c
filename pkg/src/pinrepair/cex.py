"""Counterexample search inside an input box.

The search is incomplete: ``None`` means nothing was found, not that the
property holds. Anything returned has been re-checked concretely.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from pinrepair.model import Network, forward, input_gradient, predict
from pinrepair.property import Property, satisfaction_margin, satisfied, satisfied_batch

GRID_MAX_DIM = 4


@dataclass(frozen=True)
class CexConfig:
    restarts: int = 32
    steps: int = 200
    # per-dimension step is step_frac * (upper - lower)
    step_frac: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.steps < 1 or not self.step_frac > 0:
            raise ValueError("restarts, steps and step_frac must be positive")


def _is_violation(net: Network, prop: Property, x: np.ndarray) -> bool:
    y, _ = forward(net, x)
    return prop.input.contains(x) and not satisfied(prop.output, y)


def _starts(prop: Property, cfg: CexConfig) -> list[np.ndarray]:
    box = prop.input
    d = box.dim
    starts = [box.center]
    n_corners = min(2 ** d, max(1, cfg.restarts // 4))
    if 2 ** d <= n_corners:
        corners = itertools.product((0, 1), repeat=d)
    else:
        rng = np.random.default_rng(cfg.seed)
        corners = (tuple(row) for row in rng.integers(0, 2, size=(n_corners, d)))
    for bits in corners:
        starts.append(np.where(np.array(bits, dtype=bool), box.upper, box.lower))
        if len(starts) >= cfg.restarts:
            return starts
    r = len(starts)
    while len(starts) < cfg.restarts:
        rng = np.random.default_rng(cfg.seed + r)
        starts.append(rng.uniform(box.lower, box.upper))
        r += 1
    return starts


def find_cex(net: Network, prop: Property, cfg: CexConfig | None = None) -> np.ndarray | None:
    """Projected signed-gradient descent on the satisfaction margin of the
    output constraint, from the box center, corners, and seeded random points."""
    cfg = cfg or CexConfig()
    box = prop.input
    step = cfg.step_frac * box.widths
    for x0 in _starts(prop, cfg):
        x = np.clip(x0, box.lower, box.upper)
        for _ in range(cfg.steps + 1):
            y, trace = forward(net, x)
            _, g_y = satisfaction_margin(prop.output, y)
            if not satisfied(prop.output, y):
                assert _is_violation(net, prop, x)
                return x
            g_x = input_gradient(net, trace, g_y)
            if not np.any(g_x):
                break
            x = np.clip(x - step * np.sign(g_x), box.lower, box.upper)
    return None


def grid_points(prop: Property, resolution: int) -> np.ndarray:
    """Lattice of ``resolution`` points per dimension, lexicographic order."""
    box = prop.input
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def find_cex_grid(net: Network, prop: Property, resolution: int = 101,
                  chunk: int = 200_000) -> np.ndarray | None:
    if prop.input.dim > GRID_MAX_DIM:
        raise ValueError(f"grid search is limited to {GRID_MAX_DIM} input dimensions")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    pts = grid_points(prop, resolution)
    for start in range(0, len(pts), chunk):
        block = pts[start:start + chunk]
        bad = ~satisfied_batch(prop.output, predict(net, block))
        # batched and single-input evaluation may round differently; the
        # single-input path is the reference
        for i in np.flatnonzero(bad):
            if _is_violation(net, prop, block[i]):
                return block[i].copy()
    return None
