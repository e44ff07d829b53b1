"""
Unit tests for the command line, environment defaults and SVG plots
"""

import io
import json
import os
import sys
import tempfile
import textwrap
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from unittest.mock import patch

# Add the project root to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

from esigo import __version__
from esigo.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, main
from esigo.discrete import RunConfig, run
from esigo.flow import ThetaIso
from esigo.objectives import make_builtin
from esigo.plotting import Panel, Series, plot_trajectories, render_svg
from esigo.settings import load_environment
from esigo.weights import truncation_linear

CONFIG = textwrap.dedent("""\
    experiments:
      - id: truncation
        mode: b2-report
        weight: truncation-linear
        checks: {b2: pass}
      - id: linear-bernstein
        mode: b2-report
        weight: {kind: finite, weights: [1.0, 0.0]}
        checks: {b2: pass}
""")


def invoke(*argv):
    """Run the command line and capture (exit code, stdout, stderr)"""
    stdout, stderr = io.StringIO(), io.StringIO()
    with redirect_stdout(stdout), redirect_stderr(stderr):
        code = main(list(argv))
    return code, stdout.getvalue(), stderr.getvalue()


class TestCommandLine(unittest.TestCase):
    """Test the esigo subcommands and exit codes"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        self.config = self.dir / "experiments.yaml"
        self.config.write_text(CONFIG)

    def test_version(self):
        code, out, _ = invoke("version")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(out.strip(), f"esigo {__version__}")

    def test_b2_pass(self):
        code, out, _ = invoke("b2", "--weight", "truncation-linear", "--dim", "1")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("alpha = 0.15915494309", out)
        self.assertIn("B1: pass", out)
        self.assertIn("B2: pass", out)

    def test_b2_fail(self):
        code, out, _ = invoke("b2", "--weight", "{kind: finite, weights: [1, 0]}")
        self.assertEqual(code, EXIT_FAILED)
        self.assertIn("B2: fail", out)

    def test_b2_bad_descriptor(self):
        code, _, err = invoke("b2", "--weight", "{kind: cosine}")
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("error:", err)
        code, _, _ = invoke("b2", "--weight", "truncation-linear", "--dim", "0")
        self.assertEqual(code, EXIT_CONFIG)

    def test_run_only_passing(self):
        out_dir = self.dir / "out"
        code, out, _ = invoke("run", str(self.config), "--only", "truncation", "--out", str(out_dir))
        self.assertEqual(code, EXIT_OK)
        self.assertIn("[PASS] truncation", out)
        report = json.loads((out_dir / "truncation" / "report.json").read_text())
        self.assertEqual(report["verdict"], "pass")

    def test_run_with_failure(self):
        code, out, _ = invoke("run", str(self.config), "--out", str(self.dir / "out"), "--workers", "1")
        self.assertEqual(code, EXIT_FAILED)
        self.assertIn("[FAIL] linear-bernstein", out)
        self.assertIn("1/2 experiments passed", out)

    def test_invalid_config(self):
        broken = self.dir / "broken.yaml"
        broken.write_text("experiments:\n  - id: x\n    mode: nonsense\n")
        code, _, err = invoke("run", str(broken), "--out", str(self.dir / "out"))
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn(":2:", err)

    def test_unknown_only_id(self):
        code, _, _ = invoke("run", str(self.config), "--only", "missing", "--out", str(self.dir / "out"))
        self.assertEqual(code, EXIT_CONFIG)


class TestEnvironment(unittest.TestCase):
    """Test ESIGO_* defaults"""

    def test_variables(self):
        with patch.dict(os.environ, {"ESIGO_OUTPUT_DIR": "/tmp/runs", "ESIGO_LOG_LEVEL": "debug",
                                     "ESIGO_WORKERS": "3"}):
            env = load_environment()
        self.assertEqual(env.output_dir, Path("/tmp/runs"))
        self.assertEqual(env.log_level, "DEBUG")
        self.assertEqual(env.workers, 3)

    def test_invalid_workers_fall_back(self):
        with patch.dict(os.environ, {"ESIGO_WORKERS": "many"}):
            self.assertEqual(load_environment().workers, 1)
        with patch.dict(os.environ, {"ESIGO_WORKERS": "0"}):
            self.assertEqual(load_environment().workers, 1)

    def test_dotenv_fills_unset_values(self):
        with tempfile.TemporaryDirectory() as tmp:
            dotenv = Path(tmp) / ".env"
            dotenv.write_text("ESIGO_WORKERS=4\nESIGO_OUTPUT_DIR=from-file\n")
            with patch.dict(os.environ, {"ESIGO_OUTPUT_DIR": "from-env"}):
                os.environ.pop("ESIGO_WORKERS", None)
                env = load_environment(str(dotenv))
        self.assertEqual(env.workers, 4)
        self.assertEqual(env.output_dir, Path("from-env"))


class TestPlotting(unittest.TestCase):
    """Test the SVG writer"""

    def test_empty_panel(self):
        svg = render_svg([Panel("empty", "t", "V", log_y=True)])
        self.assertTrue(svg.startswith("<svg"))
        self.assertIn("no data", svg)

    def test_non_positive_values_skipped_on_log_axis(self):
        panel = Panel("V", "t", "V", [Series("run", [0.0, 1.0, 2.0], [1.0, 0.0, -1.0])], log_y=True)
        svg = render_svg([panel])
        self.assertIn("<polyline", svg)

    def test_plot_trajectories(self):
        config = RunConfig(ThetaIso([1.0, 0.0], 1.0), 0.1, 10, 20, 0, truncation_linear(),
                           make_builtin("sphere", 2))
        trajectory = run(config)
        with tempfile.TemporaryDirectory() as tmp:
            path = plot_trajectories([trajectory], ["seed 0"], Path(tmp) / "plots" / "run.svg")
            svg = path.read_text()
        self.assertEqual(svg.count("<polyline"), 2)
        self.assertIn("seed 0", svg)
        self.assertTrue(svg.rstrip().endswith("</svg>"))


if __name__ == '__main__':
    unittest.main()
