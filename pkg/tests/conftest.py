import numpy as np
import pytest

from qmlplateau.datasets import IDX_FILES, write_idx


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """IDX copies of the 5000-image MNIST sample bundled with mlxtend."""
    mlxtend_data = pytest.importorskip("mlxtend.data")
    images, labels = mlxtend_data.mnist_data()
    root = tmp_path_factory.mktemp("mnist")
    write_idx(root / IDX_FILES["train"][0], images.reshape(-1, 28, 28).astype(np.uint8))
    write_idx(root / IDX_FILES["train"][1], labels.astype(np.uint8))
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for the terminal summary and return the verdict."""
    lines = request.config.stash[_ACCEPTANCE]

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
