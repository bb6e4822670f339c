import numpy as np
import pytest

from gpclf.clf import clf_from_lqr
from gpclf.dynamics import InputBox, PendulumParams, make_pendulum
from gpclf.gp import TrainingSet, fit
from gpclf.kernels import ADPKernel, SEKernel

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def report_acceptance():
    def record(number, ok, detail):
        ACCEPTANCE_LINES.append("criterion %d %s  %s" % (number, "PASS" if ok else "FAIL", detail))
        return ok
    return record


@pytest.fixture(scope="session")
def pendulum_pair():
    return make_pendulum(PendulumParams(mass=2.0)), make_pendulum(PendulumParams(mass=1.0))


@pytest.fixture(scope="session")
def pendulum_clf(pendulum_pair):
    return clf_from_lqr(pendulum_pair[1], np.eye(2), np.eye(1))


@pytest.fixture(scope="session")
def box1():
    return InputBox.symmetric(10.0)


def random_kernel(rng, p, n):
    return ADPKernel(tuple(SEKernel(rng.uniform(0.3, 2.0), tuple(rng.uniform(0.4, 2.0, n)))
                           for _ in range(p)))


def random_model(rng, p=2, n=2, N=20, noise=0.1):
    kernel = random_kernel(rng, p, n)
    X = rng.normal(size=(N, n))
    Y = np.hstack([np.ones((N, 1)), rng.normal(size=(N, p - 1))])
    z = rng.normal(size=N)
    return fit(kernel, TrainingSet(X, Y, z, noise))
