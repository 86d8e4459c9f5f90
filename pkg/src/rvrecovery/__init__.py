"""Simulation of sensor-attack detection, diagnosis and recovery for robotic vehicles."""

from __future__ import annotations

from .attacks import AttackSpec, BiasProfile, StealthProfile, apply_attack, stealth_bias
from .batch import BatchSettings, run_batch, sda_campaign, wind_only_campaign
from .calibration import calibrate, load_calibration, save_calibration
from .checkpoint import HistoryWindow, calibrate_window_size, reconstruct
from .config import ScenarioConfig, load_config
from .control import CascadePid, LqrWeights, RecoveryController, lqr_gain
from .detection import DetectorConfig, calibrate_detector, detect_step
from .diagnosis import DeltaProfile, Diagnoser, ErrorWindow, calibrate_delta, infer
from .dynamics import VehicleParams, fit_params, quad_derivatives, rover_step, step
from .errors import ConfigError, RVRecoveryError
from .estimation import EkfState, ekf_correct, ekf_predict, roll_forward
from .metrics import MetricsReport, mission_delay, mission_outcome, normalize_rmsd, rmsd
from .mission import Calibration, MissionSpec, RecoveryConfig, Scenario, WindConfig, run_mission
from .sensing import SamplingPlan, SensorId, align_streams, sample_sensors, states_for_sensor

__version__ = "0.1.0"

__all__ = [
    "AttackSpec", "BatchSettings", "BiasProfile", "Calibration", "CascadePid", "ConfigError",
    "DeltaProfile", "DetectorConfig", "Diagnoser", "EkfState", "ErrorWindow", "HistoryWindow",
    "LqrWeights", "MetricsReport", "MissionSpec", "RVRecoveryError", "RecoveryConfig",
    "RecoveryController", "SamplingPlan", "Scenario", "ScenarioConfig", "SensorId", "StealthProfile",
    "VehicleParams", "WindConfig", "align_streams", "apply_attack", "calibrate", "calibrate_delta",
    "calibrate_detector", "calibrate_window_size", "detect_step", "ekf_correct", "ekf_predict",
    "fit_params", "infer", "load_calibration", "load_config", "lqr_gain", "mission_delay",
    "mission_outcome", "normalize_rmsd", "quad_derivatives", "reconstruct", "rmsd", "roll_forward",
    "rover_step", "run_batch", "run_mission", "sample_sensors", "save_calibration", "sda_campaign",
    "states_for_sensor", "stealth_bias", "step", "wind_only_campaign",
]
