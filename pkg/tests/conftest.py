import numpy as np
import pytest

from redtest import ActivationMatrix, ModelTrace


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_orthogonal(rng, p):
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def make_trace(*arrays, family="plain", name="fixture"):
    layers = tuple(ActivationMatrix(f"L{k}", a) for k, a in enumerate(arrays, start=1))
    return ModelTrace(name, layers, family)


# -- acceptance summary ----------------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    crit = getattr(report, "_criterion", None)
    if crit is None:
        return
    if report.when == "call" or report.failed or report.skipped:
        prev = _ACCEPTANCE.get(crit, "PASS")
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _ACCEPTANCE[crit] = outcome if prev == "PASS" else prev


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result()._criterion = (marker.args[0], marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), outcome in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"[{outcome}] criterion {number:2d}: {title}")
