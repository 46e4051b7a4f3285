"""Tracking experiments: desired bending-angle trajectories driven open loop through
the controller into the simulated plant, with MAE/StD error metrics and the
compensation on/off comparison.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd

from utils.common import AXES, AXIS_INDEX, percent_reduction
from utils.compensation import CompensatorSettings, CompensatorState, compensate
from utils.control import ControlOptions, config_from_axis_angles, inverse_kinematics, naive_command
from utils.errors import AngleOutOfRange, ConfigurationOutOfRange, ControlError, Infeasible, ValidationError
from utils.logger import logger
from utils.model import axis_angles, config_to_tip_pose, tensions_from_displacements
from utils.plant import PlantSpec, plant_step, reset_plant

WAVEFORMS = ("sinusoid", "ramp", "hold", "piecewise")

# Hardware results the simulator is compared against (display only)
REFERENCE_TABLE = {
    "uncompensated": {"mae_position_mm": 4.80, "std_position_mm": 1.97,
                      "mae_angle_deg": 6.11, "std_angle_deg": 4.03},
    "compensated": {"mae_position_mm": 3.31, "std_position_mm": 2.02,
                    "mae_angle_deg": 3.26, "std_angle_deg": 2.90},
    "percent_reduction_position": 31.0,
    "percent_reduction_angle": 46.6,
}

# Bending angle a naive pull spends taking up the dead-zone experiment slack
DEADZONE_BAND_DEG = 10.0
# Pretension is this multiple of the tension relief caused by the slack
PRETENSION_MARGIN = 2.0


@dataclass(frozen=True)
class TrajectorySpec:
    waveform: str = "sinusoid"
    amplitude_deg: float = 45.0
    offset_deg: float = 0.0
    period_s: float = 10.0
    cycles: float = 2
    axis: str = "AP"
    sample_rate_hz: float = 50.0
    # (t_s, angle_deg) knots for the piecewise waveform
    breakpoints: tuple = ()

    def __post_init__(self):
        if self.waveform not in WAVEFORMS:
            raise ValidationError(f"Unknown waveform '{self.waveform}', expected one of {WAVEFORMS}")
        if self.axis not in AXES:
            raise ValidationError(f"Unknown axis '{self.axis}', expected one of {AXES}")
        for name in ("amplitude_deg", "offset_deg", "period_s", "cycles", "sample_rate_hz"):
            if not math.isfinite(float(getattr(self, name))):
                raise ValidationError(f"{name} must be finite")
        if self.amplitude_deg < 0:
            raise ValidationError(f"amplitude_deg must be >= 0, got {self.amplitude_deg}")
        if self.period_s <= 0:
            raise ValidationError(f"period_s must be > 0, got {self.period_s}")
        if self.cycles < 1:
            raise ValidationError(f"cycles must be >= 1, got {self.cycles}")
        if self.sample_rate_hz <= 0:
            raise ValidationError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        knots = tuple((float(t), float(a)) for t, a in self.breakpoints)
        if self.waveform == "piecewise":
            if len(knots) < 2:
                raise ValidationError("A piecewise trajectory needs at least two breakpoints")
            times = [t for t, _ in knots]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValidationError("Breakpoint times must be strictly increasing")
        object.__setattr__(self, "breakpoints", knots)

    @property
    def duration_s(self):
        return self.cycles * self.period_s

    @property
    def n_samples(self):
        return int(round(self.duration_s * self.sample_rate_hz)) + 1

    @property
    def dt(self):
        return 1.0 / self.sample_rate_hz


def generate_trajectory(spec):
    """Sample times and desired bending angles (degrees) for one trial"""
    t = np.arange(spec.n_samples) / spec.sample_rate_hz
    if spec.waveform == "sinusoid":
        theta = spec.offset_deg + spec.amplitude_deg * np.sin(2.0 * np.pi * t / spec.period_s)
    elif spec.waveform == "ramp":
        theta = spec.offset_deg + spec.amplitude_deg * t / spec.duration_s
    elif spec.waveform == "hold":
        theta = np.full_like(t, spec.offset_deg + spec.amplitude_deg)
    else:
        knots = np.asarray(spec.breakpoints)
        theta = np.interp(t, knots[:, 0], knots[:, 1])
    return t, theta


@dataclass(frozen=True)
class ExperimentSpec:
    trajectory: TrajectorySpec
    plant: PlantSpec
    controller_params: object
    control: ControlOptions = field(default_factory=ControlOptions)
    compensator: CompensatorSettings = field(default_factory=CompensatorSettings)
    trials: int = 3
    settle_time_s: float = 0.0
    workers: int = 1

    def __post_init__(self):
        if int(self.trials) < 1:
            raise ValidationError(f"trials must be >= 1, got {self.trials}")
        if not self.settle_time_s >= 0:
            raise ValidationError(f"settle_time_s must be >= 0, got {self.settle_time_s}")
        if int(self.workers) < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")
        if self.controller_params.n_tendons != self.plant.true_params.n_tendons:
            raise ValidationError(
                f"Controller drives {self.controller_params.n_tendons} tendons, "
                f"plant has {self.plant.true_params.n_tendons}")

    def trial_seeds(self):
        return [self.plant.seed + i for i in range(int(self.trials))]


def trace_columns(n_tendons):
    return (["t_s", "axis", "theta_des_deg", "theta_cmd_deg", "theta_meas_deg", "kappa_x", "kappa_y"]
            + [f"tau_{i + 1}" for i in range(n_tendons)]
            + ["tip_des_x_mm", "tip_des_y_mm", "tip_des_z_mm",
               "tip_meas_x_mm", "tip_meas_y_mm", "tip_meas_z_mm"])


@dataclass(frozen=True, eq=False)
class TrialResult:
    trial: int
    seed: int
    trace: pd.DataFrame
    error: Optional[str] = None

    @property
    def ok(self):
        return self.error is None


def run_trial(spec, trial_seed, command_fn=None, trial=0):
    """Drive one trajectory through compensator, controller and plant; returns a TrialResult.

    command_fn(params, q, opts) -> TendonCommand replaces inverse kinematics (used for
    the naive baseline). A control failure, or a command beyond the device limits,
    ends the trial with a partial trace.
    """
    command_fn = command_fn or inverse_kinematics
    params = spec.controller_params
    plant_spec = spec.plant.with_seed(trial_seed)
    traj = spec.trajectory
    axis = AXIS_INDEX[traj.axis]
    t, theta = generate_trajectory(traj)

    state = reset_plant(plant_spec)
    comp_state = CompensatorState.initial(len(AXES))
    rows, error = [], None
    for t_k, theta_k in zip(t, theta):
        desired = [0.0, 0.0]
        desired[axis] = float(theta_k)
        comp_state, commanded = compensate(comp_state, spec.compensator, desired)
        try:
            q_cmd = config_from_axis_angles(commanded[0], commanded[1], params)
            command = command_fn(params, q_cmd, spec.control)
            tip_des = config_to_tip_pose(params, config_from_axis_angles(desired[0], desired[1], params))
        except (ControlError, AngleOutOfRange, ConfigurationOutOfRange) as e:
            error = f"t={t_k:.6g}s: {type(e).__name__}: {e}"
            logger.error(f"Trial {trial} aborted at {error}")
            break
        state, pose, measured = plant_step(state, plant_spec, command.motor_positions, traj.dt)
        row = [float(t_k), traj.axis, desired[axis], commanded[axis],
               axis_angles(params, measured)[axis], q_cmd.kappa_x, q_cmd.kappa_y]
        row.extend(float(v) for v in command.tensions)
        row.extend(float(v) for v in tip_des.position_mm)
        row.extend(float(v) for v in pose.position_mm)
        rows.append(row)

    frame = pd.DataFrame(rows, columns=trace_columns(params.n_tendons))
    frame.insert(0, "trial", trial)
    return TrialResult(trial=trial, seed=int(trial_seed), trace=frame, error=error)


@dataclass(frozen=True)
class ErrorStats:
    mae: float
    std: float
    # Standard deviation of the signed error (scalar series only)
    signed_std: float


def compute_metrics(measured, reference):
    """MAE and population StD of the absolute error.

    1-D inputs are scalar series; 2-D inputs are point series whose error is
    the Euclidean distance per row.
    """
    measured = np.asarray(measured, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if measured.shape != reference.shape:
        raise ValidationError(f"Series length mismatch: {measured.shape} vs {reference.shape}")
    if measured.shape[0] == 0:
        raise ValidationError("Cannot compute metrics of an empty series")
    diff = measured - reference
    if diff.ndim == 1:
        abs_err = np.abs(diff)
        signed_std = float(np.std(diff))
    else:
        abs_err = np.linalg.norm(diff, axis=1)
        signed_std = float(np.std(abs_err))
    return ErrorStats(mae=float(np.mean(abs_err)), std=float(np.std(abs_err)), signed_std=signed_std)


def summarize_trace(trace, settle_time_s=0.0):
    """Table-style angle and tip-position statistics of a (possibly pooled) trace"""
    rows = trace[trace["t_s"] >= settle_time_s - 1e-12]
    if rows.empty:
        raise ValidationError(f"No samples left after settle time {settle_time_s} s")
    angle = compute_metrics(rows["theta_meas_deg"].to_numpy(), rows["theta_des_deg"].to_numpy())
    position = compute_metrics(
        rows[["tip_meas_x_mm", "tip_meas_y_mm", "tip_meas_z_mm"]].to_numpy(),
        rows[["tip_des_x_mm", "tip_des_y_mm", "tip_des_z_mm"]].to_numpy(),
    )
    return {
        "mae_position_mm": position.mae,
        "std_position_mm": position.std,
        "mae_angle_deg": angle.mae,
        "std_angle_deg": angle.std,
        "signed_std_angle_deg": angle.signed_std,
        "samples": int(len(rows)),
    }


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    label: str
    trials: tuple
    trace: pd.DataFrame
    pooled: dict
    per_trial: tuple

    @property
    def mae_position_mm(self):
        return self.pooled["mae_position_mm"]

    @property
    def std_position_mm(self):
        return self.pooled["std_position_mm"]

    @property
    def mae_angle_deg(self):
        return self.pooled["mae_angle_deg"]

    @property
    def std_angle_deg(self):
        return self.pooled["std_angle_deg"]


def run_experiment(spec, label="experiment", command_fn=None):
    """Run every trial of spec (in parallel when workers > 1) and pool the metrics"""
    seeds = spec.trial_seeds()

    def _run(indexed_seed):
        i, seed = indexed_seed
        return run_trial(spec, seed, command_fn=command_fn, trial=i)

    if int(spec.workers) > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=int(spec.workers)) as pool:
            results = list(pool.map(_run, enumerate(seeds)))
    else:
        results = [_run(item) for item in enumerate(seeds)]

    failed = [r for r in results if not r.ok]
    if failed:
        raise Infeasible(f"{label}: trial {failed[0].trial} failed ({failed[0].error})")

    trace = pd.concat([r.trace for r in results], ignore_index=True)
    per_trial = tuple(summarize_trace(r.trace, spec.settle_time_s) for r in results)
    pooled = summarize_trace(trace, spec.settle_time_s)
    logger.info(f"{label}: {len(results)} trials, angle MAE {pooled['mae_angle_deg']:.3f} deg, "
                f"position MAE {pooled['mae_position_mm']:.3f} mm")
    return ExperimentReport(label=label, trials=tuple(results), trace=trace, pooled=pooled, per_trial=per_trial)


@dataclass(frozen=True, eq=False)
class ComparisonResult:
    off: ExperimentReport
    on: ExperimentReport
    percent_reduction_position: Optional[float]
    percent_reduction_angle: Optional[float]

    def summary(self):
        def block(report):
            stats = {k: report.pooled[k] for k in
                     ("mae_position_mm", "std_position_mm", "mae_angle_deg", "std_angle_deg",
                      "signed_std_angle_deg")}
            stats["per_trial"] = [dict(s) for s in report.per_trial]
            return stats

        return {
            "uncompensated": block(self.off),
            "compensated": block(self.on),
            "percent_reduction_position": self.percent_reduction_position,
            "percent_reduction_angle": self.percent_reduction_angle,
            "reference": REFERENCE_TABLE,
        }


def compare_compensation(spec):
    """Identical trials (same seeds) with the compensator disabled and enabled"""
    off = run_experiment(replace(spec, compensator=replace(spec.compensator, enabled=False)), "uncompensated")
    on = run_experiment(replace(spec, compensator=replace(spec.compensator, enabled=True)), "compensated")
    if spec.plant.backlash_width_deg > 0:
        red_pos = percent_reduction(off.mae_position_mm, on.mae_position_mm)
        red_ang = percent_reduction(off.mae_angle_deg, on.mae_angle_deg)
    else:
        red_pos = red_ang = None
    return ComparisonResult(off=off, on=on, percent_reduction_position=red_pos, percent_reduction_angle=red_ang)


def detect_plateau(theta_des, theta_meas, run_length=5, meas_tol_deg=0.2, des_min_deg=2.0):
    """Runs of at least run_length samples where the output stays near zero while the
    input is clearly commanding motion; returns [(start_index, length), ...]
    """
    des = np.abs(np.asarray(theta_des, dtype=float))
    meas = np.abs(np.asarray(theta_meas, dtype=float))
    if des.shape != meas.shape:
        raise ValidationError(f"Series length mismatch: {des.shape} vs {meas.shape}")
    stuck = (meas < meas_tol_deg) & (des > des_min_deg)
    runs, start = [], None
    for i, flag in enumerate(np.append(stuck, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start >= run_length:
                runs.append((start, i - start))
            start = None
    return runs


@dataclass(frozen=True, eq=False)
class DeadzoneResult:
    pretensioned: pd.DataFrame
    naive: pd.DataFrame
    plateaus_pretensioned: list
    plateaus_naive: list
    slack_m: float = 0.0
    pretension_n: float = 0.0


def deadzone_slack(params, band_deg=DEADZONE_BAND_DEG, axis="AP"):
    """Per-tendon slack that a naive pull must take up before bending band_deg along axis"""
    angles = [0.0, 0.0]
    angles[AXIS_INDEX[axis]] = float(band_deg)
    command = naive_command(params, config_from_axis_angles(angles[0], angles[1], params))
    return float(np.max(command.displacements))


def pretension_for_slack(params, slack_m, tension_min):
    """Tension floor keeping every tendon taut after a uniform slack of slack_m is taken up"""
    if slack_m <= 0:
        return float(tension_min)
    relief = tensions_from_displacements(params, np.full(params.n_tendons, float(slack_m)))
    return max(float(tension_min), PRETENSION_MARGIN * float(np.max(relief)))


def run_deadzone_comparison(spec, slack_m=None):
    """Pretensioned minimum-energy control against a naive single-tendon pull on a
    plant with slack tendons (backlash and noise removed to isolate the dead-zone).

    By default the slack is what the naive pull needs to bend DEADZONE_BAND_DEG, and
    the pretensioned run raises its tension floor until that slack is taken up at setup.
    """
    truth = spec.plant.true_params
    slack = deadzone_slack(truth, axis=spec.trajectory.axis) if slack_m is None else float(slack_m)
    n = truth.n_tendons
    plant = replace(spec.plant, backlash_width_deg=0.0, slack_per_tendon=(slack,) * n,
                    angle_noise_std_deg=0.0, position_noise_std_m=0.0)
    base = replace(spec, plant=plant, compensator=replace(spec.compensator, enabled=False))
    floor = pretension_for_slack(spec.controller_params, slack, spec.control.tension_min)
    pretensioned = replace(base, control=replace(spec.control, tension_min=floor))
    logger.info(f"Dead-zone comparison with {slack * 1e3:.3g} mm slack, pretension {floor:.3g} N")
    results = {}
    for label, run_spec, fn in (("pretensioned", pretensioned, None), ("naive", base, naive_command)):
        trial = run_trial(run_spec, plant.seed, command_fn=fn)
        if not trial.ok:
            raise Infeasible(f"Dead-zone {label} run failed ({trial.error})")
        results[label] = trial.trace
    plateaus = {k: detect_plateau(v["theta_des_deg"], v["theta_meas_deg"]) for k, v in results.items()}
    logger.info(f"Dead-zone plateaus: pretensioned {len(plateaus['pretensioned'])}, naive {len(plateaus['naive'])}")
    return DeadzoneResult(results["pretensioned"], results["naive"], plateaus["pretensioned"], plateaus["naive"],
                          slack_m=slack, pretension_n=floor)
