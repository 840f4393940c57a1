import json
from pathlib import Path

import numpy as np
import pytest
import scipy.stats

import efsqd
from efsqd.hamiltonian import ActiveSpaceHamiltonian, read_fcidump, symmetrize_eri
from efsqd.simulator import OrbitalRotationSpec

DATA = Path(efsqd.__file__).parent / "data"
REFERENCE = json.loads((DATA / "reference_energies.json").read_text())

_CRITERIA: dict[int, str] = {}


def random_unitary(rng, m):
    return scipy.stats.unitary_group.rvs(m, random_state=rng)


def random_rotation(rng, m):
    return OrbitalRotationSpec(random_unitary(rng, m))


def random_state(rng, m):
    v = rng.standard_normal(1 << m) + 1j * rng.standard_normal(1 << m)
    return v / np.linalg.norm(v)


def random_hamiltonian(rng, m, na, nb, scale=0.5):
    h1 = rng.standard_normal((m, m))
    h1 = 0.5 * (h1 + h1.T)
    eri = symmetrize_eri(scale * rng.standard_normal((m, m, m, m)))
    return ActiveSpaceHamiltonian(m, na, nb, float(rng.standard_normal()), h1, eri)


@pytest.fixture(scope="session")
def h2():
    return read_fcidump(DATA / "h2_0.735.fcidump")


@pytest.fixture(scope="session")
def h2_stretched():
    return read_fcidump(DATA / "h2_2.50.fcidump")


@pytest.fixture(scope="session")
def h3():
    return read_fcidump(DATA / "h3_chain.fcidump")


@pytest.fixture(scope="session")
def h4():
    return read_fcidump(DATA / "h4_reactant.fcidump")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_ef_state(rng, m, na, nb, n_det, lucj=True):
    from efsqd.forging import EFState
    from efsqd.simulator import DiagonalCoulombSpec, LucjLayer

    def layers():
        if not lucj:
            return ()
        j = 0.3 * rng.standard_normal((m, m))
        return (LucjLayer(random_rotation(rng, m), DiagonalCoulombSpec(j + j.T)),)

    c = rng.standard_normal(n_det) + 1j * rng.standard_normal(n_det)
    return EFState(
        m,
        ((1 << na) - 1, (1 << nb) - 1),
        c,
        tuple(random_rotation(rng, m) for _ in range(n_det)),
        tuple(random_rotation(rng, m) for _ in range(n_det)),
        layers(),
        layers(),
    ).normalize()


@pytest.fixture
def criterion():
    """Record the verdict line of a numbered acceptance criterion."""

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
