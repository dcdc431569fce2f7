from __future__ import annotations

import importlib.util
import unittest
from contextlib import redirect_stdout
from io import StringIO
from pathlib import Path

from fixtures import QuietEvents

SCRIPTS = Path(__file__).resolve().parents[1] / "scripts"


def load_perf_smoke():
    spec = importlib.util.spec_from_file_location("perf_smoke", SCRIPTS / "perf_smoke.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


class PerfSmokeTests(QuietEvents, unittest.TestCase):
    def test_budget_pass_and_fail(self) -> None:
        perf = load_perf_smoke()
        with redirect_stdout(StringIO()) as out:
            self.assertEqual(perf.run_benchmark(iterations=1, targets=60, threshold_ms=1e9), 0)
        self.assertIn("iterations=1", out.getvalue())
        with redirect_stdout(StringIO()) as out:
            self.assertEqual(perf.run_benchmark(iterations=1, targets=60, threshold_ms=0.0), 1)
        self.assertIn("budget exceeded", out.getvalue())


class GateScriptTests(unittest.TestCase):
    def test_gates_target_the_package(self) -> None:
        self.assertIn("ruff check focal tests scripts", (SCRIPTS / "lint.sh").read_text(encoding="utf-8"))
        self.assertIn("bandit -q -r focal scripts", (SCRIPTS / "security_scan.sh").read_text(encoding="utf-8"))
        budget = (SCRIPTS / "perf_budget.sh").read_text(encoding="utf-8")
        for name in ("FOCAL_PERF_ITERATIONS", "FOCAL_PERF_TARGETS", "FOCAL_PERF_BUDGET_MS"):
            self.assertIn(name, budget)
        self.assertIn("FOCAL_FULL_ACCEPTANCE=1", (SCRIPTS / "test.sh").read_text(encoding="utf-8"))


if __name__ == "__main__":
    unittest.main()
