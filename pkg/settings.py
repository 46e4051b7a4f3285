import copy
import json
import os
import tempfile

from utils.errors import ConfigError

if os.environ.get('TDCATH_HOME'):
    ROOT_DIR = os.environ['TDCATH_HOME']
else:
    ROOT_DIR = os.path.expanduser("~/.tdcath")

try:
    os.makedirs(ROOT_DIR, exist_ok=True)
except OSError:
    # Read-only home (CI containers); fall back to the temp dir
    ROOT_DIR = os.path.join(tempfile.gettempdir(), "tdcath")
    os.makedirs(ROOT_DIR, exist_ok=True)

CRASH_FILE = os.path.join(ROOT_DIR, "crash.dump")
CONFIG_FILE = os.path.join(ROOT_DIR, "config.json")

SCHEMA_VERSION = "1.0"
SUPPORTED_SCHEMA_VERSIONS = ("1.0",)


def get_default_config():
    """Return default configuration values"""
    d = 1.0e-3
    return {
        "schema_version": SCHEMA_VERSION,
        "robot": {
            "bending_stiffness": 1.0e-3,
            "tendon_xy": [[d, 0.0], [0.0, d], [-d, 0.0], [0.0, -d]],
            "bending_length": 0.05,
            "tendon_lengths": [0.9, 0.9, 0.9, 0.9],
            "tendon_stiffnesses": [100.0, 100.0, 100.0, 100.0],
            "transmission_ratio": 3.0,
            "max_bending_angle_deg": 180.0,
        },
        "plant": {
            "stiffness_scale": 1.0,
            "layout_rotation_deg": 0.0,
            "backlash_width_deg": 20.0,
            "slack_per_tendon": [0.0, 0.0, 0.0, 0.0],
            "angle_noise_std_deg": 0.5,
            "position_noise_std_m": 0.5e-3,
            "seed": 0,
        },
        "control": {
            "tension_min": 0.5,
            "tension_max": 40.0,
            "qp_tolerance": 1.0e-9,
            "qp_max_iterations": 100,
        },
        "compensator": {
            "offset_deg": 10.0,
            "direction_deadband_deg": 0.1,
            "enabled": True,
        },
        "experiment": {
            "trajectory": {
                "waveform": "sinusoid",
                "amplitude_deg": 45.0,
                "offset_deg": 0.0,
                "period_s": 10.0,
                "cycles": 2,
                "axis": "AP",
                "sample_rate_hz": 50.0,
                "breakpoints": [],
            },
            "trials": 3,
            "settle_time_s": 0.0,
            "workers": 1,
        },
        "calibration": {
            "max_outer_iterations": 20,
            "convergence_tol": 1.0e-3,
            "step_gain": 1.0,
            "include_hysteresis": False,
            "include_noise": False,
            "probe": {
                "waveform": "sinusoid",
                "amplitude_deg": 30.0,
                "offset_deg": 0.0,
                "period_s": 10.0,
                "cycles": 1,
                "axis": "AP",
                "sample_rate_hz": 10.0,
                "breakpoints": [],
            },
        },
    }


def load_config(path=None):
    """Load configuration from a JSON file merged over the defaults.

    With no path the per-user CONFIG_FILE is used and created with defaults
    if it does not exist yet. Unknown keys are kept so the schema layer can
    reject them.
    """
    if path is None:
        path = CONFIG_FILE
        if not os.path.exists(path):
            config = get_default_config()
            save_config(config, path)
            return config
    try:
        with open(path, 'r') as f:
            config = json.load(f)
    except (json.JSONDecodeError, IOError) as e:
        raise ConfigError(f"Error reading config file {path}: {e}") from e
    if not isinstance(config, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    return _deep_merge(get_default_config(), config)


def _deep_merge(default, override):
    """Deep merge two dictionaries, with override taking precedence"""
    result = copy.deepcopy(default)
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = value
    return result


def save_config(config, path=None):
    """Save configuration to JSON file"""
    path = path or CONFIG_FILE
    try:
        with open(path, 'w') as f:
            json.dump(config, f, indent=4)
    except IOError as e:
        raise ConfigError(f"Error writing config file {path}: {e}") from e
