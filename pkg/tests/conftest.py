from dataclasses import replace

import pytest

from merge_planner.config import load_bundled
from merge_planner.sim import BehaviorProfile, ProfileKind


@pytest.fixture(scope="session")
def table_config():
    return load_bundled()


@pytest.fixture(scope="session")
def nominal_config(table_config):
    """Bundled scenario with SV0 on its nominal profile (no burst)."""
    sv0 = replace(table_config.sv0, profile=replace(table_config.sv0.profile, kind=ProfileKind.NOMINAL))
    return replace(table_config, sv0=sv0)


@pytest.fixture(scope="session")
def constant_speed_config(table_config):
    still = BehaviorProfile(ProfileKind.NOMINAL, mean=0.0, std=0.0)
    return replace(table_config, sv0=replace(table_config.sv0, profile=still),
                   sv1=replace(table_config.sv1, profile=still))


# --- acceptance report ----------------------------------------------------------

def pytest_configure(config):
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    item.config._criteria.append((mark.args[0], "PASS" if rep.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter, config):
    if not config._criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n, verdict, detail in sorted(config._criteria):
        terminalreporter.write_line(f"criterion {n}: {verdict}  {detail}")
