import itertools
import math
import os
import sys
import unittest
from unittest import mock

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def enumeration_oracle(D, moment, lower, upper):
    """Minimum of sum(tau^2) found by trying every free/lower/upper pattern"""
    n = D.shape[1]
    best = None
    for pattern in itertools.product((0, -1, 1), repeat=n):
        tau = np.zeros(n)
        free = [i for i in range(n) if pattern[i] == 0]
        for i in range(n):
            if pattern[i] == -1:
                tau[i] = lower
            elif pattern[i] == 1:
                tau[i] = upper
        fixed = [i for i in range(n) if pattern[i] != 0]
        rhs = moment - D[:, fixed] @ tau[fixed]
        if free:
            tau[free] = np.linalg.pinv(D[:, free]) @ rhs
        if np.linalg.norm(D @ tau - moment) > 1e-9 * (1 + np.linalg.norm(moment)):
            continue
        if np.any(tau < lower - 1e-9) or np.any(tau > upper + 1e-9):
            continue
        value = float(tau @ tau)
        if best is None or value < best:
            best = value
    return best


class TestControl(unittest.TestCase):
    def setUp(self):
        from utils import control, model, errors
        self.control = control
        self.model = model
        self.errors = errors
        self.params = model.RobotParams.default()
        self.opts = control.ControlOptions()

    def test_options_validation(self):
        with self.assertRaises(self.errors.ValidationError):
            self.control.ControlOptions(tension_min=5.0, tension_max=5.0)
        with self.assertRaises(self.errors.ValidationError):
            self.control.ControlOptions(tension_min=-0.1)
        with self.assertRaises(self.errors.ValidationError):
            self.control.ControlOptions(qp_tolerance=0.0)
        with self.assertRaises(self.errors.ValidationError):
            self.control.ControlOptions(weights=(1.0, -1.0, 1.0, 1.0))

    def test_straight_is_pure_pretension(self):
        result = self.control.allocate_tensions(self.params, self.model.Configuration(0.0, 0.0), self.opts)
        np.testing.assert_allclose(result.tensions, [0.5] * 4, atol=1e-12)
        self.assertEqual(result.active_set, (0, 1, 2, 3))
        self.assertAlmostEqual(result.objective_value, 1.0)
        self.assertLess(result.kkt_residual, 1e-9)

    def test_single_tendon_bend_without_floor(self):
        opts = self.control.ControlOptions(tension_min=0.0)
        result = self.control.allocate_tensions(self.params, self.model.Configuration(0.0, 1.0), opts)
        self.assertLessEqual(result.objective_value, 1.0 + 1e-12)
        np.testing.assert_allclose(result.tensions, [1.0, 0.0, 0.0, 0.0], atol=1e-10)
        D = self.model.build_D(self.params)
        np.testing.assert_allclose(D @ result.tensions, [0.0, 1e-3], atol=1e-15)

    def test_infeasible_beyond_tension_max(self):
        with self.assertRaises(self.errors.Infeasible):
            self.control.allocate_tensions(self.params, self.model.Configuration(0.0, 50.0), self.opts)
        small = self.control.ControlOptions(tension_max=15.0)
        with self.assertRaises(self.errors.Infeasible):
            self.control.allocate_tensions(self.params, self.model.Configuration(31.4, 0.0), small)

    def test_out_of_range_configuration(self):
        with self.assertRaises(self.errors.ConfigurationOutOfRange):
            self.control.allocate_tensions(self.params, self.model.Configuration(70.0, 0.0), self.opts)

    def test_degenerate_layout_rejected(self):
        collinear = self.model.RobotParams(1e-3, ((1e-3, 0), (-1e-3, 0)), 0.05, (0.9,) * 2, (100.0,) * 2)
        with self.assertRaises(self.errors.DegenerateLayout):
            self.control.allocate_tensions(collinear, self.model.Configuration(1.0, 0.0), self.opts)

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(2024)
        from test_model import random_params
        tested = 0
        while tested < 200:
            params = random_params(self.model, rng)
            opts = self.control.ControlOptions(tension_min=rng.uniform(0.0, 1.0), tension_max=rng.uniform(5.0, 40.0))
            tau_true = rng.uniform(opts.tension_min, opts.tension_max, 4)
            D = self.model.build_D(params)
            q = self.model.Configuration.from_array(D @ tau_true / params.bending_stiffness)
            if q.curvature > params.kappa_max:
                continue
            tested += 1
            result = self.control.allocate_tensions(params, q, opts)
            moment = params.bending_stiffness * q.as_array()
            expected = enumeration_oracle(D, moment, opts.tension_min, opts.tension_max)
            self.assertIsNotNone(expected)
            self.assertLessEqual(abs(result.objective_value - expected), 1e-6 * max(1.0, expected))
            self.assertLess(result.kkt_residual, 1e-8)
            self.assertGreaterEqual(result.tensions.min(), opts.tension_min - 1e-12)
            self.assertLessEqual(result.tensions.max(), opts.tension_max + 1e-12)
            self.assertLessEqual(np.linalg.norm(D @ result.tensions - moment),
                                 opts.qp_tolerance * (1 + np.linalg.norm(moment)))

    def test_raising_floor_never_lowers_objective(self):
        q = self.model.Configuration(10.0, 5.0)
        values = []
        for tmin in (0.0, 0.5, 1.0, 2.0, 4.0):
            opts = self.control.ControlOptions(tension_min=tmin)
            values.append(self.control.allocate_tensions(self.params, q, opts).objective_value)
        self.assertEqual(values, sorted(values))

    def test_tension_floor_along_trajectory(self):
        for theta in np.linspace(-60.0, 60.0, 41):
            q = self.control.config_from_axis_angles(theta, theta / 3, self.params)
            tau = self.control.allocate_tensions(self.params, q, self.opts).tensions
            self.assertGreaterEqual(tau.min(), self.opts.tension_min - 1e-12)

    def test_weighted_objective(self):
        opts = self.control.ControlOptions(tension_min=0.0, weights=(1.0, 4.0, 1.0, 1.0))
        result = self.control.allocate_tensions(self.params, self.model.Configuration(2.0, 2.0), opts)
        D = self.model.build_D(self.params)
        np.testing.assert_allclose(D @ result.tensions, [2e-3, 2e-3], atol=1e-14)
        tau = result.tensions
        self.assertAlmostEqual(result.objective_value, tau[0] ** 2 + 4 * tau[1] ** 2 + tau[2] ** 2 + tau[3] ** 2)

    def test_inverse_kinematics_zero(self):
        opts = self.control.ControlOptions(tension_min=0.0)
        cmd = self.control.inverse_kinematics(self.params, self.model.Configuration(0.0, 0.0), opts)
        np.testing.assert_allclose(cmd.tensions, 0.0, atol=1e-15)
        np.testing.assert_allclose(cmd.displacements, 0.0, atol=1e-15)
        np.testing.assert_allclose(cmd.motor_positions, 0.0, atol=1e-15)

    def test_pretension_does_not_bend(self):
        cmd = self.control.inverse_kinematics(self.params, self.model.Configuration(0.0, 0.0), self.opts)
        G = self.model.compliance_matrix(self.params)
        np.testing.assert_allclose(cmd.displacements, G @ np.full(4, 0.5))
        self.assertTrue(np.all(cmd.displacements > 0))
        np.testing.assert_allclose(cmd.motor_positions, 3.0 * cmd.displacements)
        q = self.model.forward_kinematics(self.params, cmd.displacements)
        self.assertAlmostEqual(q.kappa_x, 0.0, places=9)
        self.assertAlmostEqual(q.kappa_y, 0.0, places=9)

    def test_inverse_kinematics_round_trip(self):
        for q_des in (self.model.Configuration(0.0, 1.0), self.model.Configuration(-20.0, 12.0)):
            cmd = self.control.inverse_kinematics(self.params, q_des, self.opts)
            q = self.model.forward_kinematics(self.params, cmd.displacements)
            err = np.linalg.norm(q.as_array() - q_des.as_array())
            self.assertLess(err, 1e-9 * (1 + np.linalg.norm(q_des.as_array())))

    def test_angle_to_config(self):
        q = self.control.angle_to_config(0.0, 0.0, self.params)
        self.assertEqual((q.kappa_x, q.kappa_y), (0.0, 0.0))
        q = self.control.angle_to_config(90.0, 0.0, self.params)
        self.assertAlmostEqual(q.kappa_x, 31.41592653589793)
        self.assertAlmostEqual(q.kappa_y, 0.0)
        q = self.control.angle_to_config(45.0, 90.0, self.params)
        self.assertAlmostEqual(q.kappa_x, 0.0)
        self.assertAlmostEqual(q.kappa_y, 15.707963267948966)
        with self.assertRaises(self.errors.AngleOutOfRange):
            self.control.angle_to_config(181.0, 0.0, self.params)
        with self.assertRaises(self.errors.AngleOutOfRange):
            self.control.angle_to_config(math.nan, 0.0, self.params)

    def test_config_from_axis_angles(self):
        q = self.control.config_from_axis_angles(-30.0, 0.0, self.params)
        self.assertAlmostEqual(q.kappa_x, -math.radians(30.0) / 0.05)
        self.assertAlmostEqual(q.kappa_y, 0.0)
        ap, rl = self.model.axis_angles(self.params, self.control.config_from_axis_angles(12.0, -7.0, self.params))
        self.assertAlmostEqual(ap, 12.0)
        self.assertAlmostEqual(rl, -7.0)

    def test_naive_command_pulls_one_tendon(self):
        kappa = 10.0
        cmd = self.control.naive_command(self.params, self.model.Configuration(kappa, 0.0))
        self.assertEqual(int(np.count_nonzero(cmd.tensions)), 1)
        self.assertAlmostEqual(cmd.tensions[3], 1e-3 * kappa / 1e-3)
        G = self.model.compliance_matrix(self.params)
        np.testing.assert_allclose(cmd.displacements, G[:, 3] * cmd.tensions[3], rtol=1e-12)
        np.testing.assert_allclose(cmd.motor_positions, 3.0 * cmd.displacements)
        # Without slack the pulled tendon alone reaches the target
        q = self.model.forward_kinematics(self.params, cmd.displacements)
        self.assertAlmostEqual(q.kappa_x, kappa, places=9)
        self.assertAlmostEqual(q.kappa_y, 0.0, places=9)
        straight = self.control.naive_command(self.params, self.model.Configuration(0.0, 0.0))
        np.testing.assert_allclose(straight.motor_positions, 0.0)

    def test_solver_uses_qp_tolerance(self):
        opts = self.control.ControlOptions(qp_tolerance=1e-7)
        with mock.patch.object(self.control, "ActiveSetSolver", wraps=self.control.ActiveSetSolver) as solver:
            self.control.allocate_tensions(self.params, self.model.Configuration(10.0, -5.0), opts)
        solver.assert_called_once_with(max_iter=100, tol=1e-7)

    def test_residual_above_tolerance_raises(self):
        with mock.patch.object(self.control, "_kkt_residual", return_value=1.0):
            with self.assertRaises(self.errors.ToleranceNotMet) as ctx:
                self.control.allocate_tensions(self.params, self.model.Configuration(10.0, 0.0), self.opts)
        self.assertEqual(ctx.exception.exit_code, 2)
        self.assertIsInstance(ctx.exception, self.errors.ControlError)

    def test_active_set_solver_bound_hit(self):
        solver = self.control.ActiveSetSolver(max_iter=20)
        H = 2.0 * np.eye(3)
        A = np.ones((1, 3))
        lower = np.zeros(3)
        upper = np.array([0.8, np.inf, np.inf])
        sol = solver.solve(H, A, np.array([3.0]), lower, upper, np.array([0.0, 1.5, 1.5]))
        np.testing.assert_allclose(sol.x, [0.8, 1.1, 1.1], atol=1e-12)
        self.assertEqual(sol.working, {0: self.control.UPPER})

    def test_active_set_solver_iteration_budget(self):
        solver = self.control.ActiveSetSolver(max_iter=1)
        H = 2.0 * np.eye(3)
        A = np.ones((1, 3))
        with self.assertRaises(self.errors.MaxIterationsExceeded):
            solver.solve(H, A, np.array([3.0]), np.zeros(3), np.array([0.8, np.inf, np.inf]),
                         np.array([0.0, 1.5, 1.5]))


if __name__ == '__main__':
    unittest.main()
