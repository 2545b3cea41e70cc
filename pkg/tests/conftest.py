import pytest

from robustroa import systems
from robustroa.sos import DegreeConfig
from robustroa.zubov import synthesize


@pytest.fixture(scope="session")
def vdp():
    return systems.load("vdp")


@pytest.fixture(scope="session")
def perturbed2d():
    return systems.load("perturbed2d")


@pytest.fixture(scope="session")
def cert_vdp6(vdp):
    return synthesize(vdp, DegreeConfig(6, 12, 10))


@pytest.fixture(scope="session")
def cert_pert2(perturbed2d):
    return synthesize(perturbed2d, DegreeConfig(2, 4, 2))


# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}
ACCEPTANCE_COUNT = 8


@pytest.fixture
def criterion(capsys):
    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE[number] = (bool(ok), detail)
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: not run")
