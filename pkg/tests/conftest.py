import numpy as np
import pytest

from stylerepair.data import make_shapes_dataset
from stylerepair.models import ArchitectureSpec
from stylerepair.training import TrainConfig, train_base


@pytest.fixture(scope="session")
def shapes_train():
    return make_shapes_dataset(1000, seed=11, name="train")


@pytest.fixture(scope="session")
def shapes_test():
    return make_shapes_dataset(300, seed=12, name="test")


@pytest.fixture(scope="session")
def trained_tiny(shapes_train, shapes_test):
    """A tiny net trained briefly on shapes; good on clean, weak under noise."""
    handle, _ = train_base(ArchitectureSpec("tiny", width=16), shapes_train,
                           TrainConfig(max_epochs=4, batch_size=64, seed=0), eval_set=shapes_test)
    return handle


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def images(rng):
    return rng.uniform(size=(8, 32, 32, 3)).astype(np.float32)


# ---------------------------------------------------------------------------
# one PASS/FAIL line per acceptance criterion

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        passed = report.passed and _CRITERIA.get(number, (True, title))[0]
        _CRITERIA[number] = (passed, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, title = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}")
