import numpy as np
import pytest

from norstmiss import datagen as D


def make_stream(n=120, d=600, r=3, f=10.0, rho=0.9, change_times=(), gamma=0.0, seed=0,
                noise=0.0, time_varying=False):
    ch = list(change_times)
    tr = D.gen_truth(n, d, r, f, J=len(ch), change_times=ch, gamma=gamma, seed=seed,
                     time_varying=time_varying)
    M = D.gen_bernoulli_supports(n, d, rho, seed)
    std = noise * np.sqrt(D.CoefficientSpec(r, f).lambda_minus)
    return tr, D.assemble_stream(tr, M, noise_std=std, seed=seed)


@pytest.fixture
def small_static():
    return make_stream()


@pytest.fixture
def small_change():
    return make_stream(d=900, change_times=[451], gamma=50.0, seed=1)


# one summary line per acceptance criterion, echoed at the end of the run
ACCEPTANCE = []


@pytest.fixture
def record():
    def _record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
