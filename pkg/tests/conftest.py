import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from chaosnet.data import default_data_dir, MNIST_FILES  # noqa: E402


def mnist_available():
    d = default_data_dir()
    return os.path.isdir(d) and any(f.startswith("train-images") for f in os.listdir(d))


needs_mnist = pytest.mark.skipif(not mnist_available(), reason="MNIST IDX files not found")


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
