import os
from pathlib import Path

import pytest

MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def find_mnist():
    """Directory holding the four MNIST IDX files (optionally .gz), or None."""
    root = Path(os.environ.get("DEEPSMOTE_MNIST_DIR", "/root/data/mnist"))
    paths = {}
    for name in MNIST_FILES:
        for candidate in (root / name, root / f"{name}.gz"):
            if candidate.exists():
                paths[name] = candidate
                break
        else:
            return None
    return paths


@pytest.fixture(scope="session")
def mnist_paths():
    paths = find_mnist()
    if paths is None:
        pytest.skip("MNIST IDX files not found; set DEEPSMOTE_MNIST_DIR")
    return paths


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number, name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} ({detail})"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
            terminalreporter.write_line(line)
