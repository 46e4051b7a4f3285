"""Simulated catheter test bed.

Motor positions pass through the drivetrain (transmission ratio, tendon slack),
the true catheter statics, a per-axis backlash (play) operator in bending-angle
space and a noisy virtual EM sensor.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.optimize import nnls

from utils.errors import ValidationError
from utils.logger import logger
from utils.model import (Configuration, RobotParams, TipPose, axis_angles, compliance_factor,
                         compliance_matrix, config_to_tip_pose, statics_forward)

# Negative tensions smaller than this fraction of max|tau| are rounding noise
NEGATIVE_TENSION_TOL = 1e-12


@dataclass(frozen=True)
class PlantSpec:
    true_params: RobotParams
    backlash_width_deg: float = 0.0
    slack_per_tendon: tuple = None
    angle_noise_std_deg: float = 0.0
    position_noise_std_m: float = 0.0
    seed: int = 0

    def __post_init__(self):
        n = self.true_params.n_tendons
        slack = (0.0,) * n if self.slack_per_tendon is None else tuple(float(s) for s in self.slack_per_tendon)
        if len(slack) != n:
            raise ValidationError(f"Expected {n} slack values, got {len(slack)}")
        if not all(math.isfinite(s) and s >= 0 for s in slack):
            raise ValidationError(f"Slack must be finite and >= 0, got {slack}")
        object.__setattr__(self, "slack_per_tendon", slack)
        for name in ("backlash_width_deg", "angle_noise_std_deg", "position_noise_std_m"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(f"{name} must be finite and >= 0, got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "seed", int(self.seed))
        # The plant needs an invertible compliance to map displacements to tensions
        compliance_factor(self.true_params)

    @classmethod
    def ideal(cls, params, seed=0):
        """Transparent plant: no backlash, no slack, no noise"""
        return cls(true_params=params, seed=seed)

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    @property
    def noisy(self):
        return self.angle_noise_std_deg > 0 or self.position_noise_std_m > 0


@dataclass(frozen=True, eq=False)
class PlantState:
    # Play-operator output per axis (AP, RL), degrees
    backlash_memory: tuple
    # Consumed slack per tendon, metres
    tendon_engagement: tuple
    rng_state: dict = field(repr=False)
    time: float = 0.0
    saturated: bool = False


def play_operator(previous_output, input_value, width):
    """Backlash operator: output follows input only once input leaves the band of half-width w/2"""
    half = 0.5 * width
    return min(max(previous_output, input_value - half), input_value + half)


def reset_plant(spec):
    """Straight catheter, zero backlash memory, untouched slack, RNG seeded from spec.seed"""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    return PlantState(
        backlash_memory=(0.0, 0.0),
        tendon_engagement=(0.0,) * spec.true_params.n_tendons,
        rng_state=rng.bit_generator.state,
    )


def _tensions(params, y_eff):
    """Tendon tensions produced by effective displacements; slack tendons carry none"""
    tau = linalg.cho_solve(compliance_factor(params), y_eff)
    floor = -NEGATIVE_TENSION_TOL * max(1.0, float(np.max(np.abs(tau))))
    if np.min(tau) >= floor:
        return np.clip(tau, 0.0, None)
    # Cables cannot push: min 1/2 tau^T G tau - y^T tau over tau >= 0
    L = linalg.cholesky(compliance_matrix(params), lower=True)
    rhs = linalg.solve_triangular(L, y_eff, lower=True)
    tau, _ = nnls(L.T, rhs)
    return tau


def _saturate(params, ap_deg, rl_deg):
    magnitude = math.hypot(ap_deg, rl_deg)
    limit = params.max_bending_angle_deg
    if magnitude <= limit:
        return ap_deg, rl_deg, False
    k = limit / magnitude
    return ap_deg * k, rl_deg * k, True


def _config_from_angles(params, ap_deg, rl_deg):
    l0 = params.bending_length
    return Configuration(math.radians(ap_deg) / l0, math.radians(rl_deg) / l0)


def plant_measure(state, spec):
    """Sample the virtual EM sensor at the current plant output.

    Two angle and three position normals are drawn on every call, so the noise
    sequence does not depend on which std is zero.
    """
    params = spec.true_params
    ap, rl, _ = _saturate(params, *state.backlash_memory)
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = state.rng_state
    angle_noise = rng.standard_normal(2) * spec.angle_noise_std_deg
    position_noise = rng.standard_normal(3) * spec.position_noise_std_m

    measured_config = _config_from_angles(params, ap + angle_noise[0], rl + angle_noise[1])
    true_pose = config_to_tip_pose(params, _config_from_angles(params, ap, rl))
    measured_pose = config_to_tip_pose(params, measured_config)
    pose = TipPose(
        position=true_pose.position + position_noise,
        bending_angle=measured_pose.bending_angle,
        bending_plane=measured_pose.bending_plane,
    )
    return replace(state, rng_state=rng.bit_generator.state), pose, measured_config


def plant_step(state, spec, motor_positions, dt):
    """Advance the plant by one sample and measure it; returns (state, TipPose, Configuration)"""
    if not (math.isfinite(dt) and dt > 0):
        raise ValidationError(f"dt must be > 0, got {dt}")
    params = spec.true_params
    motor = np.asarray(motor_positions, dtype=float).reshape(-1)
    if motor.shape != (params.n_tendons,) or not np.all(np.isfinite(motor)):
        raise ValidationError(f"Expected {params.n_tendons} finite motor positions, got {motor}")

    y = motor / params.transmission_ratio
    consumed = np.clip(y, 0.0, np.asarray(spec.slack_per_tendon))
    tau = _tensions(params, y - consumed)
    q = statics_forward(params, tau)
    ap_in, rl_in = axis_angles(params, q)

    w = spec.backlash_width_deg
    ap_prev, rl_prev = state.backlash_memory
    memory = (play_operator(ap_prev, ap_in, w), play_operator(rl_prev, rl_in, w))
    saturated = _saturate(params, *memory)[2]
    if saturated and not state.saturated:
        logger.warning(f"Plant output saturated at the device limit {params.max_bending_angle_deg} deg")

    stepped = replace(
        state,
        backlash_memory=memory,
        tendon_engagement=tuple(float(c) for c in consumed),
        time=state.time + dt,
        saturated=saturated,
    )
    return plant_measure(stepped, spec)


class Plant:
    """Stateful handle around PlantSpec/PlantState; one owner steps it sequentially"""

    def __init__(self, spec):
        self.spec = spec
        self.state = reset_plant(spec)

    def reset(self, seed=None):
        if seed is not None:
            self.spec = self.spec.with_seed(seed)
        self.state = reset_plant(self.spec)
        return self.state

    def step(self, motor_positions, dt):
        self.state, pose, config = plant_step(self.state, self.spec, motor_positions, dt)
        return pose, config
