import math

import numpy as np

# Per-axis bending angles are always ordered (AP, RL)
AXES = ("AP", "RL")
AXIS_INDEX = {"AP": 0, "RL": 1}


def wrap_angle_deg(angle):
    """Wrap an angle in degrees into (-180, 180]"""
    wrapped = math.fmod(angle, 360.0)
    if wrapped <= -180.0:
        wrapped += 360.0
    elif wrapped > 180.0:
        wrapped -= 360.0
    return wrapped


def wrap_angle_rad(angle):
    """Wrap an angle in radians into (-pi, pi]"""
    return math.radians(wrap_angle_deg(math.degrees(angle)))


def rotate_xy(points, angle_deg):
    """Rotate 2-D points counter-clockwise about the origin"""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    c = math.cos(math.radians(angle_deg))
    s = math.sin(math.radians(angle_deg))
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T


def circular_mean(angles_rad):
    angles = np.asarray(angles_rad, dtype=float)
    return math.atan2(float(np.mean(np.sin(angles))), float(np.mean(np.cos(angles))))


def percent_reduction(before, after):
    """Percent reduction from before to after; None when before is not positive"""
    if before is None or after is None or not before > 0.0:
        return None
    return 100.0 * (before - after) / before


def to_builtin(value):
    """Convert numpy scalars/arrays (recursively) into JSON-serialisable builtins"""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_builtin(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value
