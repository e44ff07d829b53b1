"""
Unit tests for experiment files: parsing, validation and line reporting
"""

import os
import sys
import tempfile
import textwrap
import unittest
from pathlib import Path

import numpy as np

# Add the project root to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

from esigo.config import ExperimentMode, load_config, parse_experiment
from esigo.errors import ConfigurationError

CONFIG = textwrap.dedent("""\
    experiments:
      - id: alpha-d1
        mode: b2-report
        weight: truncation-linear
        dims: [1]
      - id: sphere-flow
        mode: ode-rank
        objective: {name: sphere, dim: 3}
        weight: {kind: power, k: 2}
        theta0: {m: 2.0, v: 0.5}
        solver: {method: rk4, fixed_step: 0.1}
        stop: {horizon: 1.0}
""")


class ConfigFileTestCase(unittest.TestCase):
    """Base class writing config text to a temporary file"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, text: str) -> Path:
        path = Path(self.tmp.name) / "experiments.yaml"
        path.write_text(textwrap.dedent(text))
        return path


class TestLoadConfig(ConfigFileTestCase):
    """Test loading whole experiment files"""

    def test_load(self):
        specs = load_config(self.write(CONFIG))
        self.assertEqual([s.id for s in specs], ["alpha-d1", "sphere-flow"])
        self.assertEqual([s.line for s in specs], [2, 6])
        self.assertIs(specs[1].mode, ExperimentMode.ODE_RANK)
        self.assertEqual(specs[1].outputs, "sphere-flow")

    def test_only(self):
        specs = load_config(self.write(CONFIG), only=["sphere-flow"])
        self.assertEqual([s.id for s in specs], ["sphere-flow"])
        with self.assertRaises(ConfigurationError):
            load_config(self.write(CONFIG), only=["missing"])

    def test_scalar_mean_broadcast(self):
        spec = load_config(self.write(CONFIG))[1]
        thetas = spec.build_thetas(3)
        self.assertEqual(len(thetas), 1)
        np.testing.assert_array_equal(thetas[0].m, [2.0, 2.0, 2.0])
        self.assertEqual(thetas[0].v, 0.5)

    def test_duplicate_id_reports_line(self):
        path = self.write(CONFIG + "  - id: alpha-d1\n    mode: b2-report\n    weight: truncation-linear\n")
        with self.assertRaises(ConfigurationError) as context:
            load_config(path)
        self.assertEqual(context.exception.line, 13)
        self.assertIn("duplicate", str(context.exception))

    def test_invalid_yaml_reports_line(self):
        path = self.write("""\
            experiments:
              - id: broken
                mode: [b2-report
        """)
        with self.assertRaises(ConfigurationError) as context:
            load_config(path)
        self.assertIsNotNone(context.exception.line)
        self.assertIn("invalid YAML", str(context.exception))

    def test_missing_experiments_list(self):
        with self.assertRaises(ConfigurationError):
            load_config(self.write("runs: []\n"))
        with self.assertRaises(ConfigurationError):
            load_config(Path(self.tmp.name) / "absent.yaml")

    def test_error_names_experiment_line(self):
        path = self.write("""\
            experiments:
              - id: ok
                mode: b2-report
                weight: truncation-linear
              - id: bad-weight
                mode: b2-report
                weight: {kind: cosine}
        """)
        with self.assertRaises(ConfigurationError) as context:
            load_config(path)
        self.assertEqual(context.exception.line, 5)
        self.assertIn("bad-weight", str(context.exception))
        self.assertIn(":5:", str(context.exception))


class TestParseExperiment(unittest.TestCase):
    """Test validation of single experiment entries"""

    def base(self, **overrides):
        entry = {"id": "e", "mode": "ode-rank", "objective": {"name": "sphere", "dim": 2},
                 "weight": "truncation-linear", "theta0": {"m": [1.0, 0.0], "v": 1.0}}
        entry.update(overrides)
        return entry

    def test_valid_entry(self):
        spec = parse_experiment(self.base())
        self.assertEqual(spec.seeds, [0])
        self.assertEqual(spec.build_objective().dim, 2)

    def test_invalid_entries(self):
        invalid = [
            {"mode": "ode-rank"},
            {"id": "e"},
            self.base(mode="simulate"),
            self.base(color="red"),
            self.base(objective=None),
            self.base(theta0=None),
            self.base(theta0={"m": [1.0, 0.0, 0.0], "v": 1.0}),
            self.base(theta0={"m": [1.0, 0.0], "v": -1.0}),
            self.base(solver={"method": "euler"}),
            self.base(stop="forever"),
            self.base(run={"eta": 0.1, "speed": 2}),
            self.base(mode="ode-exact", objective={"name": "rosenbrock", "dim": 2}),
            self.base(compare_transforms=["log"]),
            self.base(eta_ladder=[0.1, 0.01]),
            self.base(mode="discrete", run={"eta": 0.1, "iterations": 10}),
            self.base(mode="discrete", run={"n": 10}),
            self.base(mode="discrete", run={"n": 10}, eta_ladder=[0.1]),
        ]
        for entry in invalid:
            with self.assertRaises(ConfigurationError, msg=str(entry)):
                parse_experiment(entry, line=4)

    def test_discrete_ladder_without_eta(self):
        spec = parse_experiment(self.base(mode="discrete", run={"n": 10}, eta_ladder=[0.1, 0.01]))
        self.assertEqual(spec.eta_ladder, [0.1, 0.01])

    def test_scalar_lists_wrapped(self):
        spec = parse_experiment(self.base(seeds=3, compare_transforms="exp"))
        self.assertEqual(spec.seeds, [3])
        self.assertEqual(spec.compare_transforms, ["exp"])

    def test_fingerprint_ignores_position(self):
        first = parse_experiment(self.base(), line=3, source="a.yaml")
        second = parse_experiment(self.base(), line=30, source="b.yaml")
        self.assertEqual(first.fingerprint(), second.fingerprint())
        changed = parse_experiment(self.base(seeds=[1]))
        self.assertNotEqual(first.fingerprint(), changed.fingerprint())


if __name__ == '__main__':
    unittest.main()
