"""Iterative identification of bending stiffness and tendon layout rotation.

Each outer iteration drives a probe trajectory on every bending axis using the
current estimate, compares desired against measured per-axis angles and
corrects the estimate:

    stiffness   amplitude ratio A_des / A_meas (linear statics: q_meas = K_est / K_true q_des)
    layout      rotation of the measured response column away from the excited axis

Tendon lengths, tendon stiffnesses and the bending length are measured
directly and pass through unchanged.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np
import pandas as pd

from utils.common import AXES, AXIS_INDEX, circular_mean, wrap_angle_rad
from utils.control import config_from_axis_angles, inverse_kinematics
from utils.errors import DegenerateProbe, NonConvergence, ValidationError
from utils.harness import TrajectorySpec, generate_trajectory
from utils.logger import logger
from utils.model import axis_angles, layout_offset_deg, rotate_layout, scale_stiffness

LOG_COLUMNS = ["iteration", "bending_stiffness", "layout_offset_deg", "angle_error_rms_deg", "converged"]

# Direction of the ideal response column for each excited axis
AXIS_HEADING_RAD = {"AP": 0.0, "RL": math.pi / 2}


@dataclass(frozen=True, eq=False)
class ProbeSegment:
    axis: str
    t: np.ndarray = field(repr=False)
    # (N, 2) per-axis angles (AP, RL), degrees
    desired: np.ndarray = field(repr=False)
    measured: np.ndarray = field(repr=False)

    def response_column(self):
        """Least-squares per-axis response to a unit excitation of this segment's axis"""
        d = self.desired[:, AXIS_INDEX[self.axis]]
        energy = float(d @ d)
        if energy <= 0.0:
            raise DegenerateProbe(f"Probe on {self.axis} has zero desired amplitude")
        return self.measured.T @ d / energy


@dataclass(frozen=True, eq=False)
class ProbeResult:
    segments: tuple

    @property
    def angle_error_rms(self):
        err = np.concatenate([s.measured - s.desired for s in self.segments])
        return float(np.sqrt(np.mean(np.sum(err ** 2, axis=1))))

    def response_matrix(self):
        """2 x 2 least-squares map from desired to measured per-axis angles"""
        desired = np.concatenate([s.desired for s in self.segments])
        measured = np.concatenate([s.measured for s in self.segments])
        solution, *_ = np.linalg.lstsq(desired, measured, rcond=None)
        return solution.T


@dataclass(frozen=True)
class ParameterCorrection:
    stiffness_ratio: float
    rotation_deg: float

    @property
    def magnitude(self):
        """Relative change the full correction would apply (rotation measured in radians)"""
        return max(abs(self.stiffness_ratio - 1.0), abs(math.radians(self.rotation_deg)))


class UpdateStrategy(Protocol):
    def correction(self, probe_result: ProbeResult) -> ParameterCorrection:
        ...

    def apply(self, estimate, correction: ParameterCorrection, step_gain: float):
        ...


class AmplitudePhaseUpdate:
    """Multiplicative stiffness update from amplitude ratios plus a layout rotation from
    the phase of the cross-axis response
    """

    def correction(self, probe_result):
        ratios, rotations = [], []
        for segment in probe_result.segments:
            col = segment.response_column()
            amplitude = float(np.hypot(col[0], col[1]))
            if amplitude <= 0.0:
                raise DegenerateProbe(f"No measured response on the {segment.axis} probe")
            ratios.append(1.0 / amplitude)
            rotations.append(wrap_angle_rad(math.atan2(col[1], col[0]) - AXIS_HEADING_RAD[segment.axis]))
        if not ratios:
            raise DegenerateProbe("Probe result has no segments")
        return ParameterCorrection(
            stiffness_ratio=float(np.mean(ratios)),
            rotation_deg=math.degrees(circular_mean(rotations)),
        )

    def apply(self, estimate, correction, step_gain):
        factor = 1.0 + step_gain * (correction.stiffness_ratio - 1.0)
        updated = scale_stiffness(estimate, factor)
        return rotate_layout(updated, step_gain * correction.rotation_deg)


@dataclass(frozen=True)
class CalibrationSettings:
    probe_trajectory: TrajectorySpec = field(default_factory=lambda: TrajectorySpec(
        amplitude_deg=30.0, period_s=10.0, cycles=1, sample_rate_hz=10.0))
    max_outer_iterations: int = 20
    convergence_tol: float = 1e-3
    step_gain: float = 1.0
    include_hysteresis: bool = False
    include_noise: bool = False
    update_strategy: object = field(default_factory=AmplitudePhaseUpdate, compare=False)

    def __post_init__(self):
        if int(self.max_outer_iterations) < 1:
            raise ValidationError(f"max_outer_iterations must be >= 1, got {self.max_outer_iterations}")
        if not self.convergence_tol > 0:
            raise ValidationError(f"convergence_tol must be > 0, got {self.convergence_tol}")
        if not 0.0 < self.step_gain <= 1.0:
            raise ValidationError(f"step_gain must be in (0, 1], got {self.step_gain}")


@dataclass(frozen=True)
class CalibrationRecord:
    iteration: int
    params_estimate: object
    angle_error_rms: float
    converged: bool
    relative_change: float = 0.0


def calibration_plant_spec(plant_spec, settings):
    """Plant mode used while calibrating: hysteresis and noise only when asked for"""
    changes = {}
    if not settings.include_hysteresis:
        changes["backlash_width_deg"] = 0.0
    if not settings.include_noise:
        changes["angle_noise_std_deg"] = 0.0
        changes["position_noise_std_m"] = 0.0
    return replace(plant_spec, **changes) if changes else plant_spec


def run_probe(plant, params_estimate, probe, opts, axes=AXES):
    """Drive the probe trajectory on each axis in turn (plant reset before each) and
    collect synchronized desired/measured per-axis angles
    """
    t, theta = generate_trajectory(probe)
    segments = []
    for axis in axes:
        j = AXIS_INDEX[axis]
        plant.reset()
        desired = np.zeros((len(t), 2))
        desired[:, j] = theta
        measured = np.zeros_like(desired)
        for k, (ap, rl) in enumerate(desired):
            command = inverse_kinematics(params_estimate, config_from_axis_angles(ap, rl, params_estimate), opts)
            _, config = plant.step(command.motor_positions, probe.dt)
            measured[k] = axis_angles(params_estimate, config)
        segments.append(ProbeSegment(axis=axis, t=t, desired=desired, measured=measured))
    return ProbeResult(segments=tuple(segments))


def update_parameters(estimate, probe_result, settings):
    strategy = settings.update_strategy
    return strategy.apply(estimate, strategy.correction(probe_result), settings.step_gain)


def calibrate(plant, initial, settings, opts):
    """Repeat probe and update until the correction falls below convergence_tol.

    Returns the record list; raises NonConvergence (carrying the records) when the
    iteration budget runs out.
    """
    estimate = initial
    records = []
    strategy = settings.update_strategy
    for iteration in range(1, int(settings.max_outer_iterations) + 1):
        probe = run_probe(plant, estimate, settings.probe_trajectory, opts)
        correction = strategy.correction(probe)
        converged = correction.magnitude < settings.convergence_tol
        records.append(CalibrationRecord(
            iteration=iteration,
            params_estimate=estimate,
            angle_error_rms=probe.angle_error_rms,
            converged=converged,
            relative_change=correction.magnitude,
        ))
        logger.info(f"Calibration iteration {iteration}: K_b={estimate.bending_stiffness:.6g}, "
                    f"layout offset {layout_offset_deg(estimate):.4f} deg, "
                    f"RMS error {probe.angle_error_rms:.4g} deg, change {correction.magnitude:.3g}")
        if converged:
            return records
        estimate = strategy.apply(estimate, correction, settings.step_gain)
    raise NonConvergence(
        f"Calibration did not converge in {settings.max_outer_iterations} iterations "
        f"(last change {records[-1].relative_change:.3g})", records)


def calibration_log_frame(records):
    rows = [[r.iteration, r.params_estimate.bending_stiffness, layout_offset_deg(r.params_estimate),
             r.angle_error_rms, bool(r.converged)] for r in records]
    return pd.DataFrame(rows, columns=LOG_COLUMNS)
