"""Config file schema, command-line overrides and conversion into domain objects.

settings.load_config() supplies the raw dictionary (defaults merged with the
user's JSON); the pydantic models here reject unknown keys and out-of-range
values before anything is built from it.
"""
import json
from typing import List, Literal, Optional, Tuple

import pydantic
from pydantic import BaseModel, ConfigDict, Field, model_validator

import settings
from utils.calibration import CalibrationSettings
from utils.compensation import CompensatorSettings
from utils.control import ControlOptions
from utils.errors import ConfigError
from utils.harness import ExperimentSpec, TrajectorySpec
from utils.model import RobotParams, rotate_layout, scale_stiffness
from utils.plant import PlantSpec


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class RobotSection(_Section):
    bending_stiffness: float = Field(gt=0)
    tendon_xy: List[Tuple[float, float]] = Field(min_length=1)
    bending_length: float = Field(gt=0)
    tendon_lengths: List[float]
    tendon_stiffnesses: List[float]
    transmission_ratio: float = Field(3.0, gt=0)
    max_bending_angle_deg: float = Field(180.0, gt=0, le=360)

    @model_validator(mode="after")
    def _check_tendons(self):
        n = len(self.tendon_xy)
        if len(self.tendon_lengths) != n or len(self.tendon_stiffnesses) != n:
            raise ValueError(f"tendon_lengths and tendon_stiffnesses need {n} entries each")
        if any(v <= 0 for v in self.tendon_lengths + self.tendon_stiffnesses):
            raise ValueError("tendon lengths and stiffnesses must be > 0")
        return self


class PlantSection(_Section):
    # True plant = robot section with stiffness scaled and tendon layout rotated
    stiffness_scale: float = Field(1.0, gt=0)
    layout_rotation_deg: float = 0.0
    backlash_width_deg: float = Field(20.0, ge=0)
    slack_per_tendon: List[float]
    angle_noise_std_deg: float = Field(0.5, ge=0)
    position_noise_std_m: float = Field(0.5e-3, ge=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_slack(self):
        if any(s < 0 for s in self.slack_per_tendon):
            raise ValueError("slack_per_tendon entries must be >= 0")
        return self


class ControlSection(_Section):
    tension_min: float = Field(0.5, ge=0)
    tension_max: float = Field(40.0, gt=0)
    qp_tolerance: float = Field(1e-9, gt=0)
    qp_max_iterations: int = Field(100, ge=1)
    weights: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_bounds(self):
        if not self.tension_min < self.tension_max:
            raise ValueError(f"tension_min ({self.tension_min}) must be < tension_max ({self.tension_max})")
        if self.weights is not None and any(w <= 0 for w in self.weights):
            raise ValueError("weights must be > 0")
        return self


class CompensatorSection(_Section):
    offset_deg: float = Field(10.0, ge=0)
    direction_deadband_deg: float = Field(0.1, ge=0)
    enabled: bool = True


class TrajectorySection(_Section):
    waveform: Literal["sinusoid", "ramp", "hold", "piecewise"] = "sinusoid"
    amplitude_deg: float = Field(45.0, ge=0)
    offset_deg: float = 0.0
    period_s: float = Field(10.0, gt=0)
    cycles: float = Field(2, ge=1)
    axis: Literal["AP", "RL"] = "AP"
    sample_rate_hz: float = Field(50.0, gt=0)
    breakpoints: List[Tuple[float, float]] = []


class ExperimentSection(_Section):
    trajectory: TrajectorySection
    trials: int = Field(3, ge=1)
    settle_time_s: float = Field(0.0, ge=0)
    workers: int = Field(1, ge=1)


class CalibrationSection(_Section):
    max_outer_iterations: int = Field(20, ge=1)
    convergence_tol: float = Field(1e-3, gt=0)
    step_gain: float = Field(1.0, gt=0, le=1)
    include_hysteresis: bool = False
    include_noise: bool = False
    probe: TrajectorySection


class ConfigFile(_Section):
    schema_version: str
    robot: RobotSection
    plant: PlantSection
    control: ControlSection
    compensator: CompensatorSection
    experiment: ExperimentSection
    calibration: CalibrationSection

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.schema_version not in settings.SUPPORTED_SCHEMA_VERSIONS:
            raise ValueError(f"Unsupported schema_version '{self.schema_version}', "
                             f"expected one of {settings.SUPPORTED_SCHEMA_VERSIONS}")
        n = len(self.robot.tendon_xy)
        if len(self.plant.slack_per_tendon) != n:
            raise ValueError(f"plant.slack_per_tendon needs {n} entries")
        if self.control.weights is not None and len(self.control.weights) != n:
            raise ValueError(f"control.weights needs {n} entries")
        return self


def _describe(error):
    parts = []
    for item in error.errors():
        where = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def parse_config(data):
    """Validate a raw config dictionary (missing keys take the defaults)"""
    if not isinstance(data, dict):
        raise ConfigError("Config must be a JSON object")
    try:
        return ConfigFile.model_validate(settings._deep_merge(settings.get_default_config(), data))
    except pydantic.ValidationError as e:
        raise ConfigError(f"Invalid config: {_describe(e)}") from e


def parse_override(text):
    """'plant.backlash_width_deg=0' -> (['plant', 'backlash_width_deg'], 0)"""
    if "=" not in text:
        raise ConfigError(f"Override '{text}' must look like section.key=value")
    path, raw = text.split("=", 1)
    keys = [k.strip().replace("-", "_") for k in path.strip().lstrip("-").split(".")]
    if not all(keys):
        raise ConfigError(f"Override path '{path}' is malformed")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return keys, value


def apply_overrides(raw, overrides):
    """Set dotted-path overrides on a raw config dictionary (in place) and return it"""
    for item in overrides:
        keys, value = parse_override(item) if isinstance(item, str) else item
        node = raw
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"Override path '{'.'.join(keys)}' does not name a config section")
            node = node[key]
        node[keys[-1]] = value
    return raw


def load(path=None, overrides=()):
    raw = settings.load_config(path)
    return parse_config(apply_overrides(raw, overrides))


def dump(cfg):
    return cfg.model_dump(mode="json")


def robot_params(cfg):
    return RobotParams.from_dict(cfg.robot.model_dump())


def plant_spec(cfg, seed=None):
    section = cfg.plant
    truth = rotate_layout(scale_stiffness(robot_params(cfg), section.stiffness_scale), section.layout_rotation_deg)
    return PlantSpec(
        true_params=truth,
        backlash_width_deg=section.backlash_width_deg,
        slack_per_tendon=tuple(section.slack_per_tendon),
        angle_noise_std_deg=section.angle_noise_std_deg,
        position_noise_std_m=section.position_noise_std_m,
        seed=section.seed if seed is None else seed,
    )


def control_options(cfg):
    section = cfg.control
    return ControlOptions(
        tension_min=section.tension_min,
        tension_max=section.tension_max,
        qp_tolerance=section.qp_tolerance,
        qp_max_iterations=section.qp_max_iterations,
        weights=None if section.weights is None else tuple(section.weights),
    )


def compensator_settings(cfg):
    return CompensatorSettings(**cfg.compensator.model_dump())


def trajectory_spec(section):
    data = section.model_dump()
    data["breakpoints"] = tuple(tuple(p) for p in data["breakpoints"])
    return TrajectorySpec(**data)


def experiment_spec(cfg, seed=None):
    section = cfg.experiment
    return ExperimentSpec(
        trajectory=trajectory_spec(section.trajectory),
        plant=plant_spec(cfg, seed),
        controller_params=robot_params(cfg),
        control=control_options(cfg),
        compensator=compensator_settings(cfg),
        trials=section.trials,
        settle_time_s=section.settle_time_s,
        workers=section.workers,
    )


def calibration_settings(cfg):
    section = cfg.calibration
    return CalibrationSettings(
        probe_trajectory=trajectory_spec(section.probe),
        max_outer_iterations=section.max_outer_iterations,
        convergence_tol=section.convergence_tol,
        step_gain=section.step_gain,
        include_hysteresis=section.include_hysteresis,
        include_noise=section.include_noise,
    )
