"""
Unit tests for the discrete rank-based algorithm and its expected update
"""

import json
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

# Add the project root to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

from esigo.discrete import (
    RunConfig,
    StepEvent,
    _batch_ranks,
    expected_displacement,
    preferences,
    run,
    run_with_events,
    smoothed_weight,
    step,
    step_from_samples,
    write_event_log,
)
from esigo.errors import ConfigurationError, DomainError, StepRejected
from esigo.flow import ThetaIso, TrajectoryStatus, rhs_exact
from esigo.objectives import Transform, make_builtin
from esigo.quantile import quantile_model_for
from esigo.sampling import GaussianStream, sobol_normal_points
from esigo.weights import WeightKind, bernstein_from_finite, truncation_linear


class TestPreferences(unittest.TestCase):
    """Test rank preferences of one population"""

    def test_finite_weights_indexed_by_rank(self):
        w = bernstein_from_finite([1.0, 0.5, 0.0], 3)
        np.testing.assert_array_equal(preferences(np.array([3.0, 1.0, 2.0]), w), [0.0, 1.0, 0.5])

    def test_analytic_weight_at_mid_ranks(self):
        u = preferences(np.array([3.0, 1.0, 2.0]), truncation_linear())
        np.testing.assert_allclose(u, [0.0, 2.0 / 3.0, 0.0])

    def test_batch_ranks_match_searchsorted(self):
        rng = np.random.default_rng(0)
        F = rng.integers(0, 5, size=(7, 6)).astype(float)
        expected = np.stack([np.searchsorted(np.sort(row), row, side="right") for row in F])
        np.testing.assert_array_equal(_batch_ranks(F), expected)


class TestStep(unittest.TestCase):
    """Test single updates"""

    def setUp(self):
        self.obj = make_builtin("sphere", 1)
        self.w = truncation_linear()
        self.theta = ThetaIso([0.0], 1.0)
        self.x = np.array([[0.5], [-1.0]])

    def test_hand_computed_update(self):
        """Test u / n = (0.25, 0) for two samples with eta = 0.5"""
        theta = step_from_samples(self.theta, self.obj, self.w, self.x, 0.5)
        np.testing.assert_allclose(theta.m, [0.0625])
        self.assertAlmostEqual(theta.v, 0.90625)

    def test_negative_variance_rejected(self):
        with self.assertRaises(StepRejected) as context:
            step_from_samples(self.theta, self.obj, self.w, self.x, 20.0)
        self.assertAlmostEqual(context.exception.proposed_v, -2.75)

    def test_population_checks(self):
        with self.assertRaises(DomainError):
            step_from_samples(self.theta, self.obj, self.w, self.x[:1], 0.5)
        with self.assertRaises(DomainError):
            step_from_samples(self.theta, self.obj, self.w, np.zeros((4, 2)), 0.5)
        with self.assertRaises(DomainError):
            step(self.theta, self.obj, self.w, 1, GaussianStream(0), 0.5)

    def test_stream_reproducible(self):
        obj = make_builtin("sphere", 3)
        theta = ThetaIso([1.0, 0.0, -1.0], 0.5)
        first = step(theta, obj, self.w, 10, GaussianStream(42), 0.1)
        second = step(theta, obj, self.w, 10, GaussianStream(42), 0.1)
        np.testing.assert_array_equal(first.m, second.m)
        self.assertEqual(first.v, second.v)

    def test_stream_counter(self):
        stream = GaussianStream(3)
        a = stream.draw((4, 2))
        b = stream.draw((4, 2))
        self.assertEqual(stream.counter, 2)
        self.assertFalse(np.array_equal(a, b))
        np.testing.assert_array_equal(GaussianStream(3).draw((4, 2)), a)

    def test_retry_draws_leave_other_steps_alone(self):
        stream = GaussianStream(3)
        before = stream.draw((4, 2), index=2)
        retry = stream.draw((4, 2), index=1, attempt=1)
        np.testing.assert_array_equal(stream.draw((4, 2), index=2), before)
        np.testing.assert_array_equal(GaussianStream(3).draw((4, 2), index=2), before)
        self.assertFalse(np.array_equal(retry, stream.draw((4, 2), index=1)))
        self.assertEqual(stream.counter, 0)


class TestSmoothedWeight(unittest.TestCase):
    """Test the weight tracked by the discrete algorithm"""

    def test_matching_finite_weight_unchanged(self):
        w = bernstein_from_finite([1.0, 0.5, 0.0], 3)
        self.assertIs(smoothed_weight(w, 3), w)

    def test_analytic_weight_smoothed(self):
        w = smoothed_weight(truncation_linear(), 4)
        self.assertIs(w.kind, WeightKind.FINITE_WEIGHTS)
        np.testing.assert_allclose(w.finite_weights, [0.75, 0.25, 0.0, 0.0])


class TestRun(unittest.TestCase):
    """Test discrete runs"""

    def setUp(self):
        self.sphere = make_builtin("sphere", 2)
        self.w = truncation_linear()

    def config(self, **overrides):
        settings = dict(theta0=ThetaIso([1.0, 1.0], 0.5), eta=0.1, n=10, iterations=10, seed=0,
                        weight=self.w, objective=self.sphere)
        settings.update(overrides)
        return RunConfig(**settings)

    def test_recording_schedule(self):
        trajectory = run(self.config(record_every=3))
        np.testing.assert_allclose(trajectory.times(), [0.0, 0.3, 0.6, 0.9, 1.0])
        self.assertIs(trajectory.status, TrajectoryStatus.BUDGET_EXHAUSTED)
        self.assertTrue(np.all(np.isnan(trajectory.gv_over_v())))

    def test_zero_step_size(self):
        trajectory = run(self.config(eta=0.0))
        self.assertEqual(len(trajectory.records), 1)
        np.testing.assert_array_equal(trajectory.final.theta.m, [1.0, 1.0])

    def test_transform_invariance(self):
        base = run(self.config(iterations=50))
        for transform in (Transform.EXP, Transform.ARCTAN):
            other = run(self.config(iterations=50, objective=self.sphere.with_transform(transform)))
            self.assertTrue(base.identical_to(other))

    def test_scale_invariance(self):
        """Test that f and c f give identical runs for c > 0"""
        base = run(self.config(iterations=50))
        for c in (0.25, 3.0, 4.0):
            scaled = make_builtin("quadratic", 2, {"A": (c * np.eye(2)).tolist()})
            self.assertTrue(base.identical_to(run(self.config(iterations=50, objective=scaled))))

    def test_rejection_keeps_later_samples(self):
        """Test that a retried step leaves the samples of the next iteration unchanged"""
        def recorded_normals(reject_first):
            normals = []

            def recorder(theta, obj, w, x, eta):
                normals.append((x - theta.m) / np.sqrt(theta.v))
                if reject_first and len(normals) == 1:
                    raise StepRejected("update produced v' = -1", -1.0)
                return step_from_samples(theta, obj, w, x, eta)

            with patch("esigo.discrete.step_from_samples", side_effect=recorder):
                result = run_with_events(self.config(iterations=3))
            return normals, result

        plain, plain_result = recorded_normals(False)
        retried, retried_result = recorded_normals(True)
        self.assertEqual(len(plain_result.events), 0)
        self.assertEqual(len(retried_result.events), 1)
        self.assertEqual(len(retried), len(plain) + 1)
        self.assertFalse(np.allclose(retried[1], plain[0]))
        np.testing.assert_allclose(retried[2], plain[1], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(retried[3], plain[2], rtol=1e-10, atol=1e-12)

    def test_sphere_converges(self):
        trajectory = run(self.config(eta=0.2, n=20, iterations=3000, record_every=50, eps_v_rel=1e-4))
        self.assertIs(trajectory.status, TrajectoryStatus.CONVERGED)
        self.assertLess(trajectory.final.lyapunov, 1e-4 * trajectory.records[0].lyapunov)

    def test_linear_diverges(self):
        linear = make_builtin("linear", 2)
        trajectory = run(self.config(objective=linear, theta0=ThetaIso([0.0, 0.0], 1.0), n=20,
                                     iterations=5000, record_every=10, v_ceiling_rel=100.0))
        self.assertIs(trajectory.status, TrajectoryStatus.DIVERGED)
        self.assertGreater(trajectory.log_variance_slope(), 0.0)

    def test_retry_budget_exhausted(self):
        rejection = StepRejected("update produced v' = -1", -1.0)
        with patch("esigo.discrete.step_from_samples", side_effect=rejection):
            result = run_with_events(self.config())
        self.assertEqual(len(result.events), 11)
        self.assertEqual([e.attempt for e in result.events], list(range(11)))
        self.assertIs(result.trajectory.status, TrajectoryStatus.DOMAIN_ERROR)
        self.assertEqual(len(result.trajectory.records), 1)
        self.assertEqual(result.trajectory.meta["rejected_steps"], 11)

    def test_invalid_configs(self):
        for overrides in ({"eta": -0.1}, {"n": 1}, {"iterations": 0}, {"record_every": 0},
                          {"theta0": ThetaIso([0.0], 1.0)}):
            with self.assertRaises(ConfigurationError):
                run(self.config(**overrides))

    def test_event_log(self):
        events = [StepEvent(3, 0, -0.2, 0.3), StepEvent(3, 1, -0.1, 0.3)]
        with tempfile.TemporaryDirectory() as tmp:
            path = write_event_log(events, Path(tmp) / "events.jsonl")
            rows = [json.loads(line) for line in path.read_text().splitlines()]
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[1], {"event": "step-rejected", "iteration": 3, "attempt": 1,
                                   "proposed_v": -0.1, "t": 0.3})


class TestExpectedDisplacement(unittest.TestCase):
    """Test that the mean step is the flow of the Bernstein-smoothed weight"""

    def test_finite_weight_identity(self):
        obj = make_builtin("sphere", 2)
        w = bernstein_from_finite([1.0, 0.5, 0.0, 0.0], 4)
        theta = ThetaIso([1.0, 0.0], 0.5)
        mean_step = expected_displacement(theta, obj, w, 4, 0.1, n_seeds=20_000, seed=3)
        flow = rhs_exact(theta, obj, w, quantile_model_for(obj), sobol_normal_points(2**14, 2))

        np.testing.assert_array_less(np.abs(mean_step.gm - flow.gm), 4.0 * mean_step.se_gm_coords + 1e-3)
        self.assertLess(abs(mean_step.gv - flow.gv), 4.0 * mean_step.se_gv + 1e-3)

    def test_batched_steps_match_single_steps(self):
        obj = make_builtin("sphere", 2)
        theta = ThetaIso([2.0, -1.0], 0.7)
        w = truncation_linear()
        estimate = expected_displacement(theta, obj, w, 5, 0.5, n_seeds=3, seed=1)
        self.assertEqual(estimate.n_points, 3)

        # the seeds share one draw of shape (n_seeds, n, d)
        X = theta.m + np.sqrt(theta.v) * GaussianStream(1).draw((3, 5, 2))
        steps = [step_from_samples(theta, obj, w, x, 0.5) for x in X]
        np.testing.assert_allclose(estimate.gm, np.mean([(s.m - theta.m) / 0.5 for s in steps], axis=0),
                                   rtol=1e-10, atol=1e-12)
        self.assertAlmostEqual(estimate.gv, np.mean([(s.v - theta.v) / 0.5 for s in steps]), places=10)

    def test_invalid_arguments(self):
        obj = make_builtin("sphere", 1)
        with self.assertRaises(DomainError):
            expected_displacement(ThetaIso([0.0], 1.0), obj, truncation_linear(), 5, 0.0, 10)
        with self.assertRaises(DomainError):
            expected_displacement(ThetaIso([0.0], 1.0), obj, truncation_linear(), 5, 0.1, 1)


if __name__ == '__main__':
    unittest.main()
