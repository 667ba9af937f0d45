import json
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

from models.errors import ConfigError
from utils.reporting import (
    aggregate_curves, build_report, distinct_curve, load_campaign, mann_whitney_greater, speedup,
    steps_to_reach, vargha_delaney_a12,
)


def write_campaign(root: Path, name: str, agent: str, first_seen, n_steps=4, findings=()):
    d = root / name
    d.mkdir(parents=True)
    (d / "config.json").write_text(json.dumps({"seed": 0, "agent": agent}), encoding="utf-8")
    pd.DataFrame({"step": range(n_steps)}).to_csv(d / "steps.csv", index=False)
    pd.DataFrame({"state_id": range(len(first_seen)), "first_seen_step": first_seen,
                  "item_count": [1] * len(first_seen)}).to_csv(d / "states.csv", index=False)
    (d / "findings.json").write_text(json.dumps({"findings": list(findings)}), encoding="utf-8")
    return d


class TestCurves(unittest.TestCase):
    def test_distinct_curve(self):
        steps = pd.DataFrame({"step": range(4)})
        states = pd.DataFrame({"first_seen_step": [0, 2, 0]})
        np.testing.assert_array_equal(distinct_curve(steps, states), [2, 2, 3, 3])

    def test_curve_is_monotone(self):
        rng = np.random.default_rng(0)
        steps = pd.DataFrame({"step": range(50)})
        states = pd.DataFrame({"first_seen_step": rng.integers(0, 50, size=20)})
        self.assertTrue((np.diff(distinct_curve(steps, states)) >= 0).all())

    def test_aggregate(self):
        frame = aggregate_curves([np.array([2, 2, 3, 3]), np.array([1, 2, 2])])
        self.assertEqual(frame["step"].tolist(), [0, 1, 2, 3])
        self.assertEqual(frame["mean"].tolist(), [1.5, 2.0, 2.5, 3.0])
        self.assertEqual(frame["min"].tolist(), [1, 2, 2, 3])
        self.assertEqual(frame["max"].tolist(), [2, 2, 3, 3])


class TestStatistics(unittest.TestCase):
    def test_a12(self):
        self.assertEqual(vargha_delaney_a12([3, 3], [1, 2]), 1.0)
        self.assertEqual(vargha_delaney_a12([1, 2], [3, 3]), 0.0)
        self.assertEqual(vargha_delaney_a12([2, 2], [2, 2]), 0.5)
        self.assertAlmostEqual(vargha_delaney_a12([1, 3], [2]), 0.5)

    def test_mann_whitney(self):
        self.assertLess(mann_whitney_greater([10, 11, 12, 13, 14], [1, 2, 3, 4, 5]), 0.05)
        self.assertGreater(mann_whitney_greater([1, 2, 3, 4, 5], [10, 11, 12, 13, 14]), 0.9)
        self.assertEqual(mann_whitney_greater([4, 4], [4, 4]), 1.0)
        with self.assertRaises(ValueError):
            mann_whitney_greater([], [1])

    def test_speedup(self):
        self.assertEqual(steps_to_reach(np.array([1, 2, 3]), 3), 3)
        self.assertIsNone(steps_to_reach(np.array([1, 2]), 3))
        result = speedup(np.array([1.0, 2.0, 3.0]), np.array([1.0, 1.0, 2.0, 2.0, 3.0]))
        self.assertEqual((result["guided_steps"], result["baseline_steps"]), (3, 5))
        self.assertAlmostEqual(result["speedup"], 5 / 3)


class TestReport(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)
        self.dirs = [
            write_campaign(self.root, "g1", "guided", [0, 0, 2], findings=[
                {"step": 2, "kind": "AssertionFired"}, {"step": 1, "kind": "LogKeyword"}]),
            write_campaign(self.root, "g2", "guided", [0, 1, 3]),
            write_campaign(self.root, "r1", "random", [0]),
            write_campaign(self.root, "r2", "random", [0, 3]),
        ]

    def tearDown(self):
        self._tmp.cleanup()

    def test_load_campaign(self):
        summary = load_campaign(self.dirs[0])
        self.assertEqual((summary.agent, summary.steps, summary.distinct_states), ("guided", 4, 3))
        self.assertEqual((summary.first_finding_step, summary.first_assertion_step), (1, 2))
        self.assertIsNone(load_campaign(self.dirs[1]).first_finding_step)

    def test_incomplete_directory(self):
        (self.dirs[0] / "states.csv").unlink()
        with self.assertRaises(ConfigError):
            load_campaign(self.dirs[0])

    def test_report_files(self):
        out = self.root / "report"
        stats = build_report(self.dirs, out)
        for name in ("summary.csv", "curves.csv", "distinct_states.svg", "stats.json"):
            self.assertTrue((out / name).exists(), name)
        curves = pd.read_csv(out / "curves.csv")
        guided = curves[curves["agent"] == "guided"]
        self.assertEqual(guided["mean"].tolist(), [1.5, 2.0, 2.5, 3.0])
        random = curves[curves["agent"] == "random"]
        self.assertEqual(random["max"].tolist(), [1, 1, 1, 2])
        self.assertEqual(stats["a12"], 1.0)
        self.assertLess(stats["mann_whitney_p"], 0.5)
        self.assertEqual(stats["guided_steps"], 4)
        self.assertIsNone(stats["speedup"])
        self.assertEqual(json.loads((out / "stats.json").read_text(encoding="utf-8")), stats)

    def test_report_is_reproducible(self):
        build_report(self.dirs, self.root / "a")
        build_report(self.dirs, self.root / "b")
        for name in ("summary.csv", "curves.csv", "stats.json"):
            self.assertEqual((self.root / "a" / name).read_bytes(), (self.root / "b" / name).read_bytes(), name)

    def test_single_agent_has_no_comparison(self):
        stats = build_report(self.dirs[:2], self.root / "guided-only")
        self.assertEqual(stats, {"campaigns": 2})

    def test_no_campaigns(self):
        with self.assertRaises(ConfigError) as ctx:
            build_report([], self.root / "empty")
        self.assertEqual(ctx.exception.key, "campaign_dirs")


if __name__ == '__main__':
    unittest.main()
