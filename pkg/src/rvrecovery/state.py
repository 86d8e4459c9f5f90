"""Layout of the 19-component physical state vector.

A state vector is a plain ``float64`` numpy array of length :data:`N_STATES`.
Angles are radians internally; conversion to degrees happens only at the
file/CLI boundary.
"""

from __future__ import annotations

import numpy as np

STATE_NAMES = (
    "x", "y", "z",
    "vx", "vy", "vz",
    "ax", "ay", "az",
    "roll", "pitch", "yaw",
    "roll_rate", "pitch_rate", "yaw_rate",
    "mag_x", "mag_y", "mag_z",
    "alt",
)
N_STATES = len(STATE_NAMES)

X, Y, Z = 0, 1, 2
VX, VY, VZ = 3, 4, 5
AX, AY, AZ = 6, 7, 8
ROLL, PITCH, YAW = 9, 10, 11
P, Q, R = 12, 13, 14
MX, MY, MZ = 15, 16, 17
ALT = 18

POS = np.array([X, Y, Z])
VEL = np.array([VX, VY, VZ])
ACC = np.array([AX, AY, AZ])
ANGLES = np.array([ROLL, PITCH, YAW])
RATES = np.array([P, Q, R])
MAG = np.array([MX, MY, MZ])

ANGLE_MASK = np.zeros(N_STATES, dtype=bool)
ANGLE_MASK[ANGLES] = True

# Earth field in the world frame (x north, y east-ish, z up), Gauss.
EARTH_FIELD = np.array([0.22, 0.0, -0.42])


def zeros() -> np.ndarray:
    return np.zeros(N_STATES)


def wrap_angle(a):
    """Wrap radians to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def wrap_angles(state: np.ndarray) -> np.ndarray:
    out = np.array(state, dtype=float)
    out[..., ANGLES] = wrap_angle(out[..., ANGLES])
    return out


def state_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Componentwise ``a - b`` with wrapped angular differences."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d[..., ANGLES] = wrap_angle(d[..., ANGLES])
    return d


def rotation_body_to_world(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """ZYX Euler rotation matrix taking body-frame vectors to the world frame."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def magnetic_field(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Earth field seen in the body frame."""
    return rotation_body_to_world(roll, pitch, yaw).T @ EARTH_FIELD


def to_degrees(state: np.ndarray) -> np.ndarray:
    out = np.array(state, dtype=float)
    out[..., ANGLES] = np.degrees(out[..., ANGLES])
    return out


def from_degrees(state: np.ndarray) -> np.ndarray:
    out = np.array(state, dtype=float)
    out[..., ANGLES] = wrap_angle(np.radians(out[..., ANGLES]))
    return out


def check_finite(state, what: str = "state") -> None:
    from .errors import DomainError

    if not np.all(np.isfinite(state)):
        raise DomainError(f"non-finite {what}")
