import argparse
import json
import logging
import sys
import traceback

from settings import CRASH_FILE
from utils import config
from utils.calibration import calibrate, calibration_log_frame, calibration_plant_spec
from utils.common import to_builtin, wrap_angle_deg
from utils.control import allocate_tensions, angle_to_config, command_from_tensions
from utils.data_storage import ResultStorage
from utils.errors import CatheterError, NonConvergence, ValidationError
from utils.harness import REFERENCE_TABLE, compare_compensation, trace_columns
from utils.logger import logger, set_console_level
from utils.model import layout_offset_deg
from utils.plant import Plant

EXIT_OK = 0


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as ValidationError (exit 1) instead of exiting 2"""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser():
    common = CliParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON config file (default: per-user config.json)")
    common.add_argument("--out", default="results", help="Output directory")
    common.add_argument("--seed", type=int, default=None, help="Base noise seed (plant.seed)")
    common.add_argument("--quiet", action="store_true", help="Only warnings and errors on the console")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                        help="Override a config value, e.g. --set plant.backlash_width_deg=0")
    common.add_argument("--backlash-width", type=float, default=None, metavar="DEG",
                        help="Shortcut for --set plant.backlash_width_deg=DEG")

    parser = CliParser(prog="tdcath", description="Tendon-driven catheter control toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)
    sub.add_parser("experiment", parents=[common], help="Tracking experiment with and without compensation")
    sub.add_parser("calibrate", parents=[common], help="Identify bending stiffness and tendon layout")
    solve = sub.add_parser("solve", parents=[common], help="One-shot inverse kinematics as JSON")
    solve.add_argument("--theta", type=float, required=True, help="Bending angle, degrees")
    solve.add_argument("--phi", type=float, default=0.0, help="Bending plane angle, degrees")
    sub.add_parser("validate-config", parents=[common], help="Validate and print the normalised config")
    return parser


def collect_overrides(args, extra):
    """Overrides from --set, the shortcut flags and free-form --section.key VALUE arguments"""
    overrides = list(args.overrides)
    if args.backlash_width is not None:
        overrides.append(f"plant.backlash_width_deg={args.backlash_width}")
    if args.seed is not None:
        overrides.append(f"plant.seed={args.seed}")
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or "." not in token:
            raise ValidationError(f"Unrecognized argument: {token}")
        if "=" in token:
            overrides.append(token[2:])
            i += 1
            continue
        if i + 1 >= len(extra):
            raise ValidationError(f"Missing value for {token}")
        overrides.append(f"{token[2:]}={extra[i + 1]}")
        i += 2
    return overrides


def format_summary(summary):
    def fmt(value, digits=2):
        return "n/a" if value is None else f"{value:.{digits}f}"

    lines = [f"{'':<16}{'MAE pos [mm]':>14}{'StD pos [mm]':>14}{'MAE ang [deg]':>15}{'StD ang [deg]':>15}"]
    for label, key in (("uncompensated", "uncompensated"), ("compensated", "compensated")):
        s = summary[key]
        lines.append(f"{label:<16}{fmt(s['mae_position_mm']):>14}{fmt(s['std_position_mm']):>14}"
                     f"{fmt(s['mae_angle_deg']):>15}{fmt(s['std_angle_deg']):>15}")
    lines.append(f"{'% reduction':<16}{fmt(summary['percent_reduction_position'], 1):>14}{'':>14}"
                 f"{fmt(summary['percent_reduction_angle'], 1):>15}")
    ref = REFERENCE_TABLE
    lines.append("hardware reference:")
    for label in ("uncompensated", "compensated"):
        s = ref[label]
        lines.append(f"  {label:<14}{s['mae_position_mm']:>14.2f}{s['std_position_mm']:>14.2f}"
                     f"{s['mae_angle_deg']:>15.2f}{s['std_angle_deg']:>15.2f}")
    lines.append(f"  {'% reduction':<14}{ref['percent_reduction_position']:>14.1f}{'':>14}"
                 f"{ref['percent_reduction_angle']:>15.1f}")
    return "\n".join(lines)


def cmd_experiment(args, cfg):
    spec = config.experiment_spec(cfg)
    logger.info(f"Running {spec.trials} trials per condition, backlash {spec.plant.backlash_width_deg} deg")
    result = compare_compensation(spec)
    summary = result.summary()

    storage = ResultStorage(args.out)
    columns = trace_columns(spec.controller_params.n_tendons)
    storage.write_trace_csv("traces_off.csv", result.off.trace, columns)
    storage.write_trace_csv("traces_on.csv", result.on.trace, columns)
    storage.write_json("summary.json", summary)
    print(format_summary(summary))
    return EXIT_OK


def cmd_calibrate(args, cfg):
    settings = config.calibration_settings(cfg)
    truth_spec = calibration_plant_spec(config.plant_spec(cfg), settings)
    plant = Plant(truth_spec)
    failure = None
    try:
        records = calibrate(plant, config.robot_params(cfg), settings, config.control_options(cfg))
    except NonConvergence as e:
        records, failure = e.records, e

    final = records[-1].params_estimate
    truth = truth_spec.true_params
    fitted = {
        "converged": failure is None,
        "iterations": len(records),
        "params": final.to_dict(),
        "layout_offset_deg": layout_offset_deg(final),
        "plant_truth": truth.to_dict(),
        "bending_stiffness_error_pct": 100.0 * (final.bending_stiffness / truth.bending_stiffness - 1.0),
        "layout_offset_error_deg": wrap_angle_deg(layout_offset_deg(final) - layout_offset_deg(truth)),
    }
    storage = ResultStorage(args.out)
    storage.write_csv("calibration_log.csv", calibration_log_frame(records))
    storage.write_json("calibrated_params.json", fitted)
    if failure is not None:
        raise failure
    print(f"Converged after {len(records)} iterations: K_b = {final.bending_stiffness:.6g} N m^2, "
          f"layout offset {layout_offset_deg(final):.4f} deg")
    return EXIT_OK


def cmd_solve(args, cfg):
    params = config.robot_params(cfg)
    opts = config.control_options(cfg)
    try:
        q = angle_to_config(args.theta, args.phi, params)
        allocation = allocate_tensions(params, q, opts)
    except CatheterError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e), "exit_code": e.exit_code}))
        raise
    command = command_from_tensions(params, allocation.tensions)
    result = {
        "theta_deg": args.theta,
        "phi_deg": args.phi,
        "kappa_x": q.kappa_x,
        "kappa_y": q.kappa_y,
        "tensions_n": command.tensions,
        "displacements_m": command.displacements,
        "motor_positions_m": command.motor_positions,
        "objective_value": allocation.objective_value,
        "kkt_residual": allocation.kkt_residual,
        "active_set": list(allocation.active_set),
        "iterations": allocation.iterations,
    }
    print(json.dumps(to_builtin(result), indent=2))
    return EXIT_OK


def cmd_validate_config(args, cfg):
    print(json.dumps(config.dump(cfg), indent=2))
    return EXIT_OK


COMMANDS = {
    "experiment": cmd_experiment,
    "calibrate": cmd_calibrate,
    "solve": cmd_solve,
    "validate-config": cmd_validate_config,
}


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.quiet:
            set_console_level(logging.WARNING)
        cfg = config.load(args.config, collect_overrides(args, extra))
        return COMMANDS[args.command](args, cfg)
    except CatheterError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys._excepthook = sys.excepthook

    def exception_hook(exctype, value, exc_tb):
        msg = f"Exctype: {exctype}, Value: {value}\nTraceback:\n {','.join(traceback.format_tb(exc_tb, limit=20))}"
        logger.error(f"!!!! Crashed! {msg}")
        try:
            with open(CRASH_FILE, "w") as f:
                f.write(msg.replace("\\n", "\n"))
        except OSError:
            pass
        getattr(sys, "_excepthook")(exctype, value, exc_tb)

    sys.excepthook = exception_hook
    sys.exit(main())
