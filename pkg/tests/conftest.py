import numpy as np
import pytest

from mre_recon.fem import MaterialParams, assemble_system
from mre_recon.mesh import PhantomSpec, assign_phantom, build_mesh, element_adjacency

# Acceptance outcomes, filled in by tests/test_acceptance.py and echoed at the end.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def default_spec():
    return PhantomSpec()


@pytest.fixture(scope="session")
def default_phantom(default_spec):
    mesh = build_mesh(default_spec)
    E = assign_phantom(mesh, default_spec)
    return mesh, E


@pytest.fixture(scope="session")
def small_case():
    """8x8 phantom with its assembled system and adjacency graph."""
    spec = PhantomSpec(nx=8, ny=8)
    mesh = build_mesh(spec)
    E = assign_phantom(mesh, spec)
    system = assemble_system(mesh, E, MaterialParams())
    return spec, mesh, E, system, element_adjacency(mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
