import re

import numpy as np
import pytest

from adiabloch.lattice import make_lattice
from adiabloch.potential import potential_from_coeffs

TWO_PI = 2 * np.pi


@pytest.fixture
def chain():
    """One-dimensional lattice with period 2 pi, so the dual vector is 1."""
    return make_lattice([[TWO_PI]])


@pytest.fixture
def square():
    return make_lattice(TWO_PI * np.eye(2))


@pytest.fixture
def cosine(chain):
    """``V(x) = 2 cos x``."""
    return potential_from_coeffs(chain, {(1,): 1.0, (-1,): 1.0})


@pytest.fixture
def two_harmonic(square):
    """Real, inversion-symmetric two-dimensional potential with an isolated lowest band."""
    return potential_from_coeffs(square, {
        (1, 0): 1.0, (-1, 0): 1.0, (0, 1): 0.8, (0, -1): 0.8,
        (1, 1): 0.4, (-1, -1): 0.4, (1, -1): 0.25, (-1, 1): 0.25,
    })


# --- acceptance report -------------------------------------------------------------

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m or not (report.when == "call" or report.failed):
        return
    detail = dict(report.user_properties).get("detail", "")
    _ACCEPTANCE[int(m.group(1))] = (m.group(2).replace("_", " "), report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        name, outcome, detail = _ACCEPTANCE[n]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {status}  {name}: {detail}")
