"""Shared fixtures: canonical systems, transform contexts, suite budget."""

import time

import pytest
from hypothesis import settings

from flowbox import TransformContext, load_system
from flowbox import kernels

settings.register_profile("ci", deadline=None, derandomize=True,
                          max_examples=50)
settings.load_profile("ci")


S_CONST = {
    "n": 1, "m": 1, "l": 1, "T": 1.0,
    "x0": [0.0], "u0": [0.0],
    "U": [[-2.0, 2.0]], "A": [[-1.0, 1.0]],
    "f": ["a1"], "g": [["1"]], "gamma": "x1",
}

S_LIN = {
    "n": 1, "m": 1, "l": 1, "T": 1.0,
    "x0": [1.0], "u0": [0.0],
    "U": [[-1.0, 1.0]], "A": [[-1.0, 1.0]],
    "f": ["a1"], "g": [["x1"]], "gamma": "x1",
}

S_COMM2 = {
    "n": 2, "m": 2, "l": 1, "T": 1.0,
    "x0": [1.0, 1.0], "u0": [0.0, 0.0],
    "U": [[-1.0, 1.0], [-1.0, 1.0]], "A": [[-1.0, 1.0]],
    "f": ["a1", "0"], "g": [["x1", "0"], ["0", "x2"]],
    "gamma": "x1",
}

S_NONCOMM = {
    "n": 2, "m": 2, "l": 1, "T": 1.0,
    "x0": [0.0, 0.0], "u0": [0.0, 0.0],
    "U": [[-1.0, 1.0], [-1.0, 1.0]], "A": [[0.0, 0.0]],
    "f": ["a1", "0"], "g": [["1", "0"], ["x1", "0"]],
    "gamma": "x1",
}


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    kernels.warmup()


@pytest.fixture(scope="session")
def suite_start():
    return time.time()


@pytest.fixture(scope="session", autouse=True)
def _suite_budget(suite_start):
    yield
    elapsed = time.time() - suite_start
    assert elapsed < 60.0, f"test suite took {elapsed:.1f} s (budget 60 s)"


@pytest.fixture(scope="session")
def s_const():
    return load_system(S_CONST)


@pytest.fixture(scope="session")
def s_lin():
    return load_system(S_LIN)


@pytest.fixture(scope="session")
def s_comm2():
    return load_system(S_COMM2)


@pytest.fixture(scope="session")
def s_noncomm():
    return load_system(S_NONCOMM)


@pytest.fixture(scope="session")
def ctx_const(s_const):
    return TransformContext(s_const)


@pytest.fixture(scope="session")
def ctx_lin(s_lin):
    return TransformContext(s_lin)


@pytest.fixture(scope="session")
def ctx_comm2(s_comm2):
    return TransformContext(s_comm2)
