import numpy as np
import pytest

# criterion number -> [title, passed so far]
_criteria = {}
_notes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains models; several minutes on CPU")
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    entry = _criteria.setdefault(n, [title, True])
    if report.failed or (report.when == "call" and report.skipped):
        entry[1] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}")
        for text in _notes.get(n, []):
            terminalreporter.write_line(f"              {text}")


@pytest.fixture
def note(request):
    """Attach a measured value to this test's criterion line in the summary."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        if marker is not None:
            _notes.setdefault(marker.args[0], []).append(text)

    return add


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_frames(rng, T, scale=0.3):
    """Valid ``T x 184`` coefficient frames (rotations well inside [-pi, pi])."""
    return (rng.standard_normal((T, 184)) * scale).astype(np.float32)
