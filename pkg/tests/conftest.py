from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from rvrecovery.calibration import load_calibration
from rvrecovery.mission import MissionSpec, WindConfig

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def stored_calibration():
    """Calibration file written by ``rvrecovery calibrate`` with default settings."""
    return load_calibration(DATA / "calibration.json")


def short_mission(seed: int = 0, attacks=(), wind_speed: float = 2.0, length: float = 20.0) -> MissionSpec:
    """A straight hop at 5 m altitude; 20 m takes about 20 s of flight."""
    wp = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 5.0], [length, 0.0, 5.0]])
    return MissionSpec(wp, "S", wind=WindConfig(wind_speed, 0.5, 0.5), attacks=tuple(attacks), seed=seed)


# Acceptance verdict lines, filled by test_acceptance.py and echoed at the end of the run.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
