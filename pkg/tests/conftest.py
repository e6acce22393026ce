import numpy as np
import pytest

from mabs.scenario import ScenarioConfig, generate_scenario

CRITERIA = []


def random_case(seed, K, M, L, **overrides):
    """Scenario plus a uniformly random placement inside its region."""
    cfg = ScenarioConfig(num_users=K, num_antennas=M, paths_per_user=L, **overrides)
    scenario = generate_scenario(cfg, seed)
    rng = np.random.default_rng(10_000 + seed)
    apv = rng.uniform(-cfg.half_width, cfg.half_width, (M, 2))
    return scenario, apv


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""
    def _report(number, ok, detail):
        CRITERIA.append((number, bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(CRITERIA):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}: {detail}")
