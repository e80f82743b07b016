import numpy as np
import pytest

from cavity_spdc.params import SourceConfig


@pytest.fixture
def base():
    return SourceConfig.reference()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def binomial_sigma(p, n):
    return np.sqrt(p * (1 - p) / n)


# acceptance criteria: one PASS/FAIL line each, printed in the terminal summary

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        number, title = marker.args
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if rep.failed and rep.when == "setup":
            detail = "setup error"
        _ACCEPTANCE.append((number, "PASS" if rep.passed else "FAIL", title, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{status} criterion {number}: {title} | {detail}")
