from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from rampmerge.core import RoadGeometry, ScenarioConfig, bundled_scenario, load_scenario

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, one-line detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def geometry():
    return RoadGeometry()


@pytest.fixture(scope="session")
def reference_cfg() -> ScenarioConfig:
    return load_scenario(bundled_scenario("paper_iv"))


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def record_acceptance():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {number}: {detail}")
