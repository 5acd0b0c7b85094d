from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from afcmem.tomography import load_dataset

DATA = Path(__file__).resolve().parents[1] / "src" / "afcmem" / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def p_in():
    return load_dataset(DATA / "p_in.csv")


@pytest.fixture(scope="session")
def p_out():
    return load_dataset(DATA / "p_out.csv")


def random_hermitian(rng, n=4):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (a + a.conj().T) / 2


def random_unitary(rng, n=2):
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


thetas = st.lists(st.floats(-10, 10, allow_nan=False, allow_infinity=False), min_size=16, max_size=16).filter(
    lambda v: sum(x * x for x in v) > 1e-6
)


@pytest.fixture(scope="session")
def baseline():
    from afcmem.report import load_baseline

    return load_baseline(DATA / "baseline_tables.json")


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
