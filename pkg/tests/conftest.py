import pytest
from hypothesis import settings

from skyrescue.scenario import GenConfig, generate_scenario

settings.register_profile("repo", max_examples=40, deadline=None)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def desk():
    """Desk-scale world: 3 UAVs, 5 rounds, 15 subareas, 75 GERs."""
    return generate_scenario(GenConfig(), 7)


@pytest.fixture(scope="session")
def small():
    return generate_scenario(GenConfig(n_uavs=2, rounds=2, n_gers=12, n_risks=4), 3)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, title, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
