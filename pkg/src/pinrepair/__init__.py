"""Verify-and-repair toolkit for feed-forward ReLU classifiers.

A network that fails a reachability property on an input box is repaired by
splitting the box, finding a counterexample in each unverified piece, and
pinning the activations of the hidden neurons whose gradients contribute most
to the violation. The result is a piecewise model that dispatches inputs to
per-region pin sets.
"""

from pinrepair.model import (
    DenseLayer,
    FormatError,
    Network,
    NeuronRef,
    backward,
    forward,
    load_network,
    pin,
    predict,
    save_network,
)
from pinrepair.property import (
    Box,
    LinearAssertion,
    OutputConstraint,
    Property,
    bisect,
    desugar,
    label_spec,
    satisfied,
)
from pinrepair.verifier import check, deeppoly_bounds, interval_bounds
from pinrepair.piecewise import Patch, PiecewiseModel, dispatch
from pinrepair.repair import RepairParams, overall, repair_region

__version__ = "0.1.0"

__all__ = [
    "Box",
    "DenseLayer",
    "FormatError",
    "LinearAssertion",
    "Network",
    "NeuronRef",
    "OutputConstraint",
    "Patch",
    "PiecewiseModel",
    "Property",
    "RepairParams",
    "backward",
    "bisect",
    "check",
    "deeppoly_bounds",
    "desugar",
    "dispatch",
    "forward",
    "interval_bounds",
    "label_spec",
    "load_network",
    "overall",
    "pin",
    "predict",
    "repair_region",
    "satisfied",
    "save_network",
]
