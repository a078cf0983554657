import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

MNIST_CANDIDATES = (os.environ.get("SDMCL_MNIST_DIR", ""), "/root/data/mnist", os.path.expanduser("~/data/mnist"))


def mnist_dir():
    for path in MNIST_CANDIDATES:
        if path and os.path.exists(os.path.join(path, "train-labels-idx1-ubyte")):
            return path
    return None


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ---------------------------------------------------------

_ACCEPTANCE = {}


def record_acceptance(number, ok, detail):
    _ACCEPTANCE[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
