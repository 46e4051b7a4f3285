import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


class TestCalibration(unittest.TestCase):
    def setUp(self):
        from utils import calibration, plant, model, control, common, errors
        self.cal = calibration
        self.plant = plant
        self.model = model
        self.common = common
        self.errors = errors
        self.params = model.RobotParams.default()
        self.opts = control.ControlOptions()
        self.settings = calibration.CalibrationSettings()

    def plant_for(self, stiffness_scale=1.0, rotation_deg=0.0):
        truth = self.model.rotate_layout(self.model.scale_stiffness(self.params, stiffness_scale), rotation_deg)
        return self.plant.Plant(self.plant.PlantSpec.ideal(truth)), truth

    def fake_probe(self, gain, rotation_deg):
        """Probe result whose response to each axis is a scaled rotation of the input"""
        t = np.linspace(0.0, 10.0, 101)
        theta = 30.0 * np.sin(2 * np.pi * t / 10.0)
        c, s = np.cos(np.radians(rotation_deg)), np.sin(np.radians(rotation_deg))
        R = gain * np.array([[c, -s], [s, c]])
        segments = []
        for j, axis in enumerate(("AP", "RL")):
            desired = np.zeros((len(t), 2))
            desired[:, j] = theta
            segments.append(self.cal.ProbeSegment(axis, t, desired, desired @ R.T))
        return self.cal.ProbeResult(tuple(segments))

    def offset_error(self, estimate, truth):
        return abs(self.common.wrap_angle_deg(
            self.model.layout_offset_deg(estimate) - self.model.layout_offset_deg(truth)))

    def test_settings_validation(self):
        for kwargs in ({"step_gain": 0.0}, {"step_gain": 1.5}, {"max_outer_iterations": 0},
                       {"convergence_tol": 0.0}):
            with self.assertRaises(self.errors.ValidationError):
                self.cal.CalibrationSettings(**kwargs)

    def test_truth_is_a_fixed_point(self):
        plant, truth = self.plant_for()
        records = self.cal.calibrate(plant, truth, self.settings, self.opts)
        self.assertEqual(len(records), 1)
        self.assertTrue(records[0].converged)
        self.assertLess(records[0].angle_error_rms, 1e-6)
        self.assertEqual(records[0].params_estimate, truth)

    def test_stiffer_plant_undershoots(self):
        plant, _ = self.plant_for(stiffness_scale=1.2)
        probe = self.cal.run_probe(plant, self.params, self.settings.probe_trajectory, self.opts)
        for segment in probe.segments:
            col = segment.response_column()
            self.assertAlmostEqual(col[0] + col[1], 1.0 / 1.2, delta=0.01)
        self.assertGreater(probe.angle_error_rms, 1.0)

    def test_rotated_layout_cross_couples(self):
        plant, _ = self.plant_for(rotation_deg=10.0)
        probe = self.cal.run_probe(plant, self.params, self.settings.probe_trajectory, self.opts, axes=("AP",))
        segment = probe.segments[0]
        np.testing.assert_allclose(segment.measured[:, 1], segment.desired[:, 0] * np.sin(np.radians(10.0)),
                                   atol=0.05)
        col = segment.response_column()
        self.assertAlmostEqual(np.degrees(np.arctan2(col[1], col[0])), 10.0, delta=0.1)

    def test_update_arithmetic(self):
        probe = self.fake_probe(1.0 / 1.2, 0.0)
        correction = self.cal.AmplitudePhaseUpdate().correction(probe)
        self.assertAlmostEqual(correction.stiffness_ratio, 1.2)
        self.assertAlmostEqual(correction.rotation_deg, 0.0)
        full = self.cal.update_parameters(self.params, probe, self.settings)
        self.assertAlmostEqual(full.bending_stiffness, 1.2e-3)
        half = self.cal.update_parameters(self.params, probe, self.cal.CalibrationSettings(step_gain=0.5))
        self.assertAlmostEqual(half.bending_stiffness, 1.1e-3)
        self.assertEqual(half.tendon_lengths, self.params.tendon_lengths)
        self.assertEqual(half.bending_length, self.params.bending_length)

    def test_update_rotation(self):
        probe = self.fake_probe(1.0, -15.0)
        correction = self.cal.AmplitudePhaseUpdate().correction(probe)
        self.assertAlmostEqual(correction.rotation_deg, -15.0)
        self.assertAlmostEqual(correction.stiffness_ratio, 1.0)
        updated = self.cal.update_parameters(self.params, probe, self.settings)
        self.assertAlmostEqual(self.model.layout_offset_deg(updated), -15.0)
        self.assertAlmostEqual(updated.bending_stiffness, self.params.bending_stiffness)

    def test_zero_correction_is_fixed(self):
        probe = self.fake_probe(1.0, 0.0)
        correction = self.cal.AmplitudePhaseUpdate().correction(probe)
        self.assertAlmostEqual(correction.magnitude, 0.0)
        self.assertEqual(self.cal.update_parameters(self.params, probe, self.settings), self.params)
        self.assertAlmostEqual(probe.angle_error_rms, 0.0)
        np.testing.assert_allclose(probe.response_matrix(), np.eye(2), atol=1e-12)

    def test_recovers_soft_estimate(self):
        plant, truth = self.plant_for()
        initial = self.model.scale_stiffness(truth, 0.7)
        records = self.cal.calibrate(plant, initial, self.settings, self.opts)
        self.assertTrue(records[-1].converged)
        estimate = records[-1].params_estimate
        self.assertAlmostEqual(estimate.bending_stiffness / truth.bending_stiffness, 1.0, delta=0.02)
        self.assertLess(records[-1].angle_error_rms, records[0].angle_error_rms)

    def test_recovers_layout_rotation(self):
        plant, truth = self.plant_for(rotation_deg=15.0)
        records = self.cal.calibrate(plant, self.params, self.settings, self.opts)
        self.assertTrue(records[-1].converged)
        self.assertLess(self.offset_error(records[-1].params_estimate, truth), 1.0)

    def test_recovers_combined_errors(self):
        for scale, rotation in ((1.3, 10.0), (0.7, -10.0)):
            plant, truth = self.plant_for(stiffness_scale=scale, rotation_deg=rotation)
            records = self.cal.calibrate(plant, self.params, self.settings, self.opts)
            estimate = records[-1].params_estimate
            self.assertAlmostEqual(estimate.bending_stiffness / truth.bending_stiffness, 1.0, delta=0.02)
            self.assertLess(self.offset_error(estimate, truth), 1.0)
            self.assertEqual([r.iteration for r in records], list(range(1, len(records) + 1)))

    def test_stiffness_error_contracts(self):
        for scale in (0.5, 1.5):
            for gain in (1.0, 0.5):
                plant, truth = self.plant_for(stiffness_scale=scale)
                settings = self.cal.CalibrationSettings(step_gain=gain)
                records = self.cal.calibrate(plant, self.params, settings, self.opts)
                errors = [abs(r.params_estimate.bending_stiffness / truth.bending_stiffness - 1.0) for r in records]
                for before, after in zip(errors, errors[1:]):
                    self.assertLess(after, before)
                self.assertLess(errors[-1], 0.02)

    def test_calibration_is_deterministic(self):
        spec = self.plant.PlantSpec(self.model.scale_stiffness(self.params, 1.2), angle_noise_std_deg=0.5, seed=3)
        settings = self.cal.CalibrationSettings(include_noise=True)
        logs = []
        for _ in range(2):
            plant = self.plant.Plant(self.cal.calibration_plant_spec(spec, settings))
            try:
                records = self.cal.calibrate(plant, self.params, settings, self.opts)
            except self.errors.NonConvergence as e:
                records = e.records
            logs.append(self.cal.calibration_log_frame(records))
        self.assertTrue(logs[0].equals(logs[1]))

    def test_non_convergence_carries_records(self):
        plant, _ = self.plant_for(stiffness_scale=1.3)
        settings = self.cal.CalibrationSettings(max_outer_iterations=1)
        with self.assertRaises(self.errors.NonConvergence) as ctx:
            self.cal.calibrate(plant, self.params, settings, self.opts)
        self.assertEqual(ctx.exception.exit_code, 4)
        self.assertEqual(len(ctx.exception.records), 1)
        self.assertFalse(ctx.exception.records[0].converged)

    def test_degenerate_probe(self):
        t = np.linspace(0.0, 1.0, 5)
        segment = self.cal.ProbeSegment("AP", t, np.zeros((5, 2)), np.zeros((5, 2)))
        with self.assertRaises(self.errors.DegenerateProbe):
            segment.response_column()
        plant, _ = self.plant_for()
        flat = self.cal.CalibrationSettings(probe_trajectory=self.cal.TrajectorySpec(amplitude_deg=0.0))
        with self.assertRaises(self.errors.DegenerateProbe):
            self.cal.calibrate(plant, self.params, flat, self.opts)

    def test_calibration_plant_spec(self):
        spec = self.plant.PlantSpec(self.params, backlash_width_deg=20.0, angle_noise_std_deg=0.5)
        quiet = self.cal.calibration_plant_spec(spec, self.settings)
        self.assertEqual(quiet.backlash_width_deg, 0.0)
        self.assertEqual(quiet.angle_noise_std_deg, 0.0)
        kept = self.cal.calibration_plant_spec(
            spec, self.cal.CalibrationSettings(include_hysteresis=True, include_noise=True))
        self.assertIs(kept, spec)

    def test_log_frame(self):
        plant, _ = self.plant_for(stiffness_scale=1.2)
        records = self.cal.calibrate(plant, self.params, self.settings, self.opts)
        frame = self.cal.calibration_log_frame(records)
        self.assertEqual(list(frame.columns), self.cal.LOG_COLUMNS)
        self.assertEqual(len(frame), len(records))
        self.assertTrue(frame["converged"].iloc[-1])
        self.assertFalse(frame["converged"].iloc[0])
        self.assertAlmostEqual(frame["bending_stiffness"].iloc[0], 1e-3)


if __name__ == '__main__':
    unittest.main()
