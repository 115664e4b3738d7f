import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mtcbench.bench import parse_config, run_campaign, write_report  # noqa: E402

# criterion number -> (passed, detail), filled by the acceptance tests
CRITERIA = {}

DESK_SEED = 2024


@pytest.fixture
def criterion():
    def record(number, passed, detail=""):
        CRITERIA[number] = (bool(passed), detail)
        return passed

    return record


@pytest.fixture(scope="session")
def desk_campaigns(tmp_path_factory):
    """Desk-profile campaigns on quasi-periodic and Poisson traffic, with wall times."""
    out = tmp_path_factory.mktemp("desk")
    results = {}
    for traffic in ("quasi", "poisson"):
        cfg = parse_config(f"[experiment]\ntraffic = {traffic}\n", profile="desk", overrides={"seed": DESK_SEED})
        t0 = time.perf_counter()
        agg = run_campaign(cfg, out / traffic)
        elapsed = time.perf_counter() - t0
        write_report(agg, out / traffic)
        results[traffic] = (cfg, agg, elapsed)
    return results


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
