from pathlib import Path

import numpy as np
import pytest

from pinrepair.model import DenseLayer, Network

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def net222() -> Network:
    return Network(
        (
            DenseLayer([[1.0, 1.0], [1.0, -1.0]], [0.0, 0.0], "relu"),
            DenseLayer([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0], "identity"),
        ),
        2,
    )


def constant_net(values, n_in: int = 2) -> Network:
    """Zero weights, output bias ``values``: the same scores for every input."""
    values = np.asarray(values, dtype=float)
    return Network(
        (
            DenseLayer(np.zeros((2, n_in)), np.zeros(2), "relu"),
            DenseLayer(np.zeros((values.size, 2)), values, "identity"),
        ),
        n_in,
    )


def identity_net(n: int = 2) -> Network:
    return Network((DenseLayer(np.eye(n), np.zeros(n), "identity"),), n)


ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def record():
    """Store one pass/fail line per acceptance criterion for the terminal summary."""
    def _record(n: int, ok: bool, detail: str, warn: bool = False) -> bool:
        status = "FAIL" if not ok else "WARN" if warn else "PASS"
        ACCEPTANCE[n] = (status, detail)
        print(f"criterion {n}: {status} - {detail}")
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status} - {detail}")
