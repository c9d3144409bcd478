import numpy as np
import pytest

from multiblank.loss import BlankSet, LossConfig


def random_instance(rng, max_T=6, max_U=4, max_V=5, sigmas=(0.0, 0.05, 0.2)):
    T = int(rng.integers(1, max_T + 1))
    U = int(rng.integers(0, max_U + 1))
    V = int(rng.integers(1, max_V + 1))
    extra = [m for m in (2, 3, 4) if rng.random() < 0.5]
    blank_set = BlankSet(tuple([1] + extra))
    z = rng.normal(0.0, 2.0, size=(T, U + 1, V + len(blank_set)))
    labels = rng.integers(0, V, size=U).tolist()
    sigma = float(rng.choice(sigmas))
    return z, labels, LossConfig(sigma, blank_set)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


def record_acceptance(number, ok, detail):
    _ACCEPTANCE[number] = (ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
