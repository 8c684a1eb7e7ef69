import os

import numpy as np
import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="session")
def raw_fixture_text() -> str:
    # newline="" keeps the CRLF bytes that belong to the records
    with open(os.path.join(FIXTURES, "raw_messages.txt"), encoding="utf-8", newline="") as fh:
        return fh.read()


@pytest.fixture(scope="session")
def golden_lines() -> list[str]:
    with open(os.path.join(FIXTURES, "golden_clean.txt"), encoding="utf-8") as fh:
        return fh.read().splitlines()


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f with respect to x.

    f takes no arguments; it must read x (by reference) on each call. This is
    the independent oracle for every analytic gradient in the package.
    """
    g = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = g.ravel()
    for i in range(flat_x.size):
        keep = flat_x[i]
        flat_x[i] = keep + h
        up = f()
        flat_x[i] = keep - h
        down = f()
        flat_x[i] = keep
        flat_g[i] = (up - down) / (2.0 * h)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.abs(analytic - numeric)
    den = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float((num / den).max())
