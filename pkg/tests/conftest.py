import numpy as np
import pytest

from annotmix.data import AnnotationSet, Dataset, make_blobs

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        prev = _CRITERIA.get(number)
        # a criterion split over several tests fails if any part fails
        if prev is None or prev[1] == "PASS" or status == "FAIL":
            _CRITERIA[number] = (title, status if prev is None or prev[1] != "FAIL" else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>3}: {status}  {title}")


def central_difference(f, x, h=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


@pytest.fixture
def tiny_dataset():
    feats = np.array([[0.0, 0.0], [2.0, 4.0], [1.0, 3.0], [3.0, 1.0]])
    return Dataset(feats, 3, np.array([0, 1, 2, 1]))


@pytest.fixture
def tiny_annotations():
    return AnnotationSet.from_records([(0, 0, 0), (0, 1, 2), (1, 0, 1), (2, 1, 2), (3, 0, 1), (3, 1, 0)], 2)


@pytest.fixture(scope="session")
def blobs_small():
    train = make_blobs(120, seed=3)
    test = make_blobs(200, seed=4, split_tag="test")
    return train, test
