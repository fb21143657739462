import math

import numpy as np
import pytest

from lgdrl.sim import RoadGeometry, VehicleState, make_world

GEO = RoadGeometry()


def car(x, lane, v=20.0, heading=0.0, y=None):
    """Vehicle centred in ``lane`` (or at ``y``) moving along +x."""
    y = GEO.lane_center(lane) if y is None else y
    return VehicleState(
        x=x, y=y, v_x=v * math.cos(heading), v_y=v * math.sin(heading), heading=heading, lane_index=GEO.lane_of(y)
    )


def world(ego, *svs, target=None):
    return make_world(ego, svs, GEO, target)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# Acceptance summary: one pass/fail line per criterion at the end of the run.

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = report.nodeid.split("::")[-1]
    if "test_acceptance.py" in report.nodeid and name.startswith("test_criterion_"):
        key = name[len("test_"):]
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[key] = ("PASS" if report.outcome == "passed" else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split("_")[1])):
        status, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{status}  {key}" + (f"  ({detail})" if detail else ""))
