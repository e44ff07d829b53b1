"""
Unit tests for the explicit Runge-Kutta integrators
"""

import os
import sys
import unittest

import numpy as np

# Add the project root to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

from esigo.errors import ConfigurationError, DomainError
from esigo.solvers import SolverSettings, integrate_ode


def decay(y):
    return -y


def rotation(y):
    return np.array([y[1], -y[0]])


class TestSolverSettings(unittest.TestCase):
    """Test settings validation"""

    def test_defaults(self):
        settings = SolverSettings()
        settings.validate()
        self.assertEqual(settings.method, "rkf45")
        self.assertTrue(settings.adaptive)
        self.assertEqual(settings.parameterization, "log-variance")

    def test_from_dict(self):
        settings = SolverSettings.from_dict({"method": "rk4", "fixed_step": 0.5})
        self.assertFalse(settings.adaptive)
        self.assertEqual(settings.fixed_step, 0.5)

    def test_invalid_settings(self):
        with self.assertRaises(ConfigurationError):
            SolverSettings.from_dict({"method": "euler"})
        with self.assertRaises(ConfigurationError):
            SolverSettings.from_dict({"rtol": 0.0})
        with self.assertRaises(ConfigurationError):
            SolverSettings.from_dict({"parameterization": "precision"})
        with self.assertRaises(ConfigurationError):
            SolverSettings.from_dict({"tolerance": 1e-6})


class TestIntegration(unittest.TestCase):
    """Test accuracy, output placement and early stops"""

    def test_rkf45_accuracy(self):
        result = integrate_ode(decay, np.array([1.0]), 2.0, [0.5, 1.0, 2.0], SolverSettings())
        self.assertEqual(result.reason, "horizon")
        self.assertEqual(result.times, [0.0, 0.5, 1.0, 2.0])
        np.testing.assert_allclose([y[0] for y in result.states], np.exp(-np.array(result.times)), rtol=1e-7)

    def test_rk4_accuracy(self):
        settings = SolverSettings(method="rk4", fixed_step=0.01)
        result = integrate_ode(rotation, np.array([1.0, 0.0]), np.pi, [np.pi], settings)
        np.testing.assert_allclose(result.states[-1], [-1.0, 0.0], atol=1e-8)
        self.assertAlmostEqual(result.times[-1], np.pi)

    def test_steps_land_on_outputs(self):
        settings = SolverSettings(method="rk4", fixed_step=0.3)
        outputs = [0.1, 0.25, 0.7, 1.0]
        result = integrate_ode(decay, np.array([1.0]), 1.0, outputs, settings)
        self.assertEqual(result.times, [0.0] + outputs)

    def test_outputs_beyond_horizon_ignored(self):
        result = integrate_ode(decay, np.array([1.0]), 1.0, [0.5, 1.0, 3.0], SolverSettings())
        self.assertEqual(result.times[-1], 1.0)

    def test_monitor_stops_run(self):
        def monitor(t, y):
            return "converged" if y[0] < 0.5 else None

        settings = SolverSettings(method="rk4", fixed_step=0.1)
        result = integrate_ode(decay, np.array([1.0]), 5.0, [5.0], settings, monitor)
        self.assertEqual(result.reason, "converged")
        self.assertLess(result.states[-1][0], 0.5)
        self.assertAlmostEqual(result.times[-1], 0.7, places=12)

    def test_max_steps(self):
        settings = SolverSettings(method="rk4", fixed_step=0.01, max_steps=10)
        result = integrate_ode(decay, np.array([1.0]), 1.0, [1.0], settings)
        self.assertEqual(result.reason, "max-steps")
        self.assertEqual(result.n_steps, 10)


class TestDomainErrors(unittest.TestCase):
    """Test the handling of vector fields that leave their domain"""

    @staticmethod
    def bounded(y):
        if y[0] > 1.5:
            raise DomainError("left the domain")
        return np.ones(1)

    def test_fixed_step_stops(self):
        settings = SolverSettings(method="rk4", fixed_step=0.4)
        result = integrate_ode(self.bounded, np.zeros(1), 2.0, [0.4, 0.8, 1.2, 1.6, 2.0], settings)
        self.assertEqual(result.reason, "domain-error")
        self.assertAlmostEqual(result.times[-1], 1.2)

    def test_adaptive_step_rejects_before_stopping(self):
        result = integrate_ode(self.bounded, np.zeros(1), 2.0, [1.0, 2.0], SolverSettings())
        self.assertEqual(result.reason, "domain-error")
        self.assertGreater(result.n_rejected, 0)
        self.assertEqual(result.times, [0.0, 1.0])


if __name__ == '__main__':
    unittest.main()
