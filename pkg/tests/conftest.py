import numpy as np
import pytest

from ivnli import SynthSpec, generate_corpus

_CRITERIA: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if not marker:
        return
    if report.when == "call":
        _CRITERIA.append(("PASS" if report.passed else "FAIL", marker))
    elif report.failed:
        _CRITERIA.append(("FAIL", marker))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for status, name in _CRITERIA:
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """3 classes, 6 train + 2 dev utterances each, 1.5 s, noiseless."""
    spec = SynthSpec(n_classes=3, n_train=6, n_dev=2, duration_s=1.5, noise_level=0.0, seed=7)
    out = tmp_path_factory.mktemp("small_corpus")
    return generate_corpus(spec, out), out


@pytest.fixture(scope="session")
def acceptance_corpus(tmp_path_factory):
    """11 classes, 10 train + 3 dev utterances each, 3 s, noise 0.1, seed 0."""
    out = tmp_path_factory.mktemp("acceptance_corpus")
    return generate_corpus(SynthSpec(), out), out
