import numpy as np
import pytest

from mflimit.config import small, standard_meanfield, standard_micro, tiny
from mflimit.lattice import LatticeConfig
from mflimit.meanfield import MeanFieldModel, MeanFieldState
from mflimit.potentials import PotentialSpec

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record (criterion, passed, detail); printed in the terminal summary."""

    def rec(num: int, passed: bool, detail: str):
        _ACCEPTANCE[num] = (bool(passed), detail)
        print(f"criterion {num:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return rec


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def std_micro():
    return standard_micro()


@pytest.fixture(scope="session")
def std_mf():
    return standard_meanfield()


@pytest.fixture(scope="session")
def tiny_rc():
    return tiny()


@pytest.fixture(scope="session")
def small_rc():
    return small()


@pytest.fixture(scope="session")
def mf_model(std_mf):
    return MeanFieldModel(std_mf.lattice, std_mf.potentials, "fd")


@pytest.fixture(scope="session")
def mf_initial(std_mf):
    return MeanFieldState(std_mf.X0_array(), std_mf.V0_array(), std_mf.phi0())


def free_spec():
    return PotentialSpec(kind_w="zero", kind_v="zero")


def cfg8():
    return LatticeConfig(dim=1, length=8.0, sites=8, tracer_sites=8)
