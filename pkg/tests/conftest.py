import numpy as np
import pytest

from ldmma.conic import product_distance


def row_slacks(program, z):
    """Slack ``b - A z`` of a lowered program at ``z``."""
    return program.b - program.A @ z


def feasible(program, z, tol=1e-9):
    return product_distance(row_slacks(program, z), program.cones) <= tol


def set_vars(layout, n, **values):
    z = np.zeros(n)
    for name, v in values.items():
        var = layout.variables[name]
        z[var.offset:var.offset + var.size] = np.ravel(v)
    return z


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
