import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ehsecrecy.mdp import solve  # noqa: E402
from ehsecrecy.models import FadingModel, SystemConfig  # noqa: E402

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _ACCEPTANCE[number] = (title, rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def default_config():
    return SystemConfig.default()


@pytest.fixture(scope="session")
def default_full(default_config):
    return solve(default_config)


@pytest.fixture(scope="session")
def default_variants(default_config):
    out = {}
    for name, csi, coding in [("FULL", "full", "variable"), ("PAR-VAR", "partial", "variable"),
                              ("PAR-CON", "partial", "constant"),
                              ("STAT", "statistical", "constant")]:
        out[name] = solve(default_config.with_(csi=csi, coding=coding))
    return out


@pytest.fixture(scope="session")
def good_bad():
    return FadingModel.discrete([1 / 30, 3 / 30], [0.7, 0.3])
