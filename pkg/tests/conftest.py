from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from cantorspec.construction import ConstructionParams, ScheduleConfig, build_schedule, build_stage

settings.register_profile("pkg", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")

# acceptance lines collected by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE: dict[str, str] = {}


def record(ac: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[ac] = f"{ac} {'PASS' if passed else 'FAIL'}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda s: int(s[2:])):
        terminalreporter.write_line(ACCEPTANCE[key])


BASE = ConstructionParams(alpha=1.0, beta=0.0)


@pytest.fixture(scope="session")
def params():
    return BASE


@pytest.fixture(scope="session")
def sched10():
    return build_schedule(BASE, ScheduleConfig(M_list=(10,)))


@pytest.fixture(scope="session")
def sched10_40():
    return build_schedule(BASE, ScheduleConfig(M_list=(10, 40)))


@pytest.fixture(scope="session")
def sched10_400():
    return build_schedule(BASE, ScheduleConfig(M_list=(10, 400)))


@pytest.fixture(scope="session")
def stage10(sched10):
    return build_stage(BASE, sched10, 1, S_max=2000)


@pytest.fixture(scope="session")
def stage10_400_dens(sched10_400):
    # spatial work only needs the density, not a long spectrum
    return build_stage(BASE, sched10_400, 2, S_max=64)
