from __future__ import annotations

import math

import numpy as np
import pytest

from rvrecovery.attacks import StealthProfile
from rvrecovery.config import ScenarioConfig, load_config
from rvrecovery.errors import ConfigError
from rvrecovery.sensing import SensorId

EXAMPLE = """
[vehicle]
mass = 1.6
max_steer_deg = 30.0

[mission]
type = "S"
waypoints = [[0, 0, 0], [0, 0, 10], [60, 0, 10]]
cruise_speed = 4.0

[wind]
speed = 4.0
direction_deg = 90.0
gust = 0.5

[attack.1]
sensors = ["gps", "gyro"]
emitter = [30.0, 0.0, 10.0]
range = 26.0
start = 15.0
seed = 3

[attack.1.gyro]
profile = "constant"
magnitude = 90.0

[attack.2]
sensors = ["baro"]
emitter = [50.0, 0.0, 0.0]
range = 10.0
profile = "stealth"
stealth = "A2"
slope = 0.2
cap = 2.0

[detector]
k = 3.0
stealth_missions = 25

[recovery]
mode = "worst-case"
clear_hold = 1.5

[recovery.lqr]
angle = 40.0

[seed]
base = 42

[noise]
gps_position = 0.8

[sampling]
gps = 5.0

[campaign]
missions = 3
sensor_counts = [1, 2]
modes = ["targeted", "worst-case"]
"""


class TestLoad:
    def test_example_round_trip(self):
        cfg = load_config(EXAMPLE)
        assert cfg.vehicle.mass == 1.6
        assert cfg.vehicle.max_steer == pytest.approx(math.radians(30.0))
        assert cfg.wind.direction == pytest.approx(math.pi / 2)
        assert cfg.seed == 42
        assert cfg.recovery.mode == "worst-case" and cfg.recovery.lqr.angle == 40.0
        assert cfg.noise.gps_position == 0.8
        assert cfg.plan.rates[SensorId.GPS] == 5.0
        assert cfg.detector.stealth_missions == 25
        assert cfg.campaign.sensor_counts == (1, 2)

    def test_attacks(self):
        a1, a2 = load_config(EXAMPLE).attacks
        assert a1.targets == {SensorId.GPS, SensorId.GYROSCOPE}
        assert a1.profiles[SensorId.GYROSCOPE].magnitude == pytest.approx(math.radians(90.0))
        assert a1.profiles[SensorId.GPS].kind == "sda"
        assert a1.windows == ((15.0, math.inf),) and a1.seed == 3
        sp = a2.profiles[SensorId.BAROMETER].stealth
        assert isinstance(sp, StealthProfile) and sp.kind == "A2" and float(sp.cap) == 2.0

    def test_mission_spec(self):
        spec = load_config(EXAMPLE).mission_spec()
        assert spec.seed == 42 and len(spec.attacks) == 2
        assert np.array_equal(spec.waypoints[-1], [60.0, 0.0, 10.0])

    def test_defaults(self, tmp_path):
        path = tmp_path / "empty.toml"
        path.write_text("")
        cfg = load_config(str(path))
        assert isinstance(cfg, ScenarioConfig) and cfg.attacks == ()


class TestErrors:
    def _keys(self, text):
        with pytest.raises(ConfigError) as exc:
            load_config(text)
        return exc.value.keys

    def test_unknown_section(self):
        assert "lidar" in self._keys("[lidar]\nrate = 1\n")

    def test_unknown_keys_listed(self):
        keys = self._keys("[vehicle]\nmass = 1\nwings = 2\n[wind]\nsped = 3\n")
        assert "vehicle.wings" in keys

    def test_attack_over_limit(self):
        text = '[attack.1]\nsensors = ["gps"]\nemitter = [500, 0, 0]\nprofile = "constant"\nmagnitude = 80\n'
        assert "attack.1.gps.bias" in self._keys(text)

    def test_wind_too_strong(self):
        assert "wind.speed" in self._keys("[wind]\nspeed = 12.0\n")

    def test_bad_mode(self):
        assert "recovery.mode" in self._keys('[recovery]\nmode = "fast"\n')

    def test_bad_campaign(self):
        assert "campaign.sensor_counts" in self._keys("[campaign]\nsensor_counts = [0, 6]\n")

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/scenario.toml")

    def test_malformed_toml(self):
        with pytest.raises(ConfigError):
            load_config("[vehicle\nmass = 1\n")

    def test_start_inside_attack_range(self):
        text = ('[mission]\nwaypoints = [[0, 0, 0], [0, 0, 10], [60, 0, 10]]\n'
                '[attack.1]\nsensors = ["gps"]\nemitter = [5, 0, 0]\nrange = 20\n')
        with pytest.raises(ConfigError):
            load_config(text).mission_spec()
