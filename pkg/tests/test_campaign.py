import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import pandas as pd

from models.errors import CheckpointError, ConfigError, ReplayDivergenceError, VersionMismatchError
from models.database import CheckpointStore
from harness.campaign import (
    Campaign, collect_steady_summaries, load_config, parse_config, run_baseline_random, run_campaign,
    schedule_seed,
)
from harness.oracles import FindingKind
from harness.replay import replay, reproduces
from netsim.simulator import ProcessAbort
from sut.raftlite import RaftNode
from utils.reporting import mann_whitney_greater, vargha_delaney_a12

MS = 1_000_000

SMALL = {
    "seed": 3,
    "sim": {"node_count": 3},
    "steps_per_schedule": 4,
    "window_ns": 400 * MS,
    "reset_ns": 800 * MS,
    "budget_steps": 12,
}


def small_config(**overrides):
    data = dict(SMALL)
    data.update(overrides)
    return parse_config(data)


class TestConfig(unittest.TestCase):
    def test_defaults(self):
        cfg = parse_config({})
        self.assertEqual(cfg.sim.node_count, 5)
        self.assertEqual(len(cfg.alphabet()), 2 + 5 * 6 + 1)

    def test_error_carries_dotted_key(self):
        cases = [
            ({"sim": {"node_count": 2}}, "sim.node_count"),
            ({"faults": ["Meteor"]}, "faults"),
            ({"bogus": 1}, "bogus"),
            ({"epsilon": 1.5}, "epsilon"),
            ({"workload": {"read_fraction": -0.1}}, "workload.read_fraction"),
            ({"bugs": ["off_by_one"]}, "bugs"),
            ({"schema_version": 99}, "schema_version"),
        ]
        for data, key in cases:
            with self.assertRaises(ConfigError, msg=key) as ctx:
                parse_config(data)
            self.assertEqual(ctx.exception.key, key)

    def test_unreadable_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "campaign.json"
            path.write_text("{not json", encoding="utf-8")
            with self.assertRaises(ConfigError):
                load_config(path)
            path.write_text(json.dumps({"seed": 4}), encoding="utf-8")
            self.assertEqual(load_config(path).seed, 4)

    def test_schedule_seeds(self):
        self.assertEqual(schedule_seed(1, 2), schedule_seed(1, 2))
        self.assertNotEqual(schedule_seed(1, 2), schedule_seed(1, 3))
        self.assertNotEqual(schedule_seed(1, 2), schedule_seed(2, 2))


class TestCampaignLoop(unittest.TestCase):
    def test_guided_campaign(self):
        result = run_campaign(small_config())
        frame = result.steps_frame()
        self.assertEqual(frame["step"].tolist(), list(range(12)))
        self.assertEqual(frame["schedule"].tolist(), [s for s in range(3) for _ in range(4)])
        self.assertEqual(frame["step_in_schedule"].tolist(), [0, 1, 2, 3] * 3)
        # every schedule starts from the reset state
        self.assertTrue((frame[frame["step_in_schedule"] == 0]["prior_state"] == 0).all())
        self.assertGreaterEqual(result.distinct_states, 2)
        self.assertTrue(set(frame["reward"]) <= {0.0, -1.0})
        self.assertTrue(((frame["reward"] == 0.0) == frame["was_new"]).all())
        for row in result.qtable.rows.values():
            self.assertTrue((row <= 0.0).all())

    def test_same_seed_same_campaign(self):
        a = run_campaign(small_config()).steps_frame()
        b = run_campaign(small_config()).steps_frame()
        pd.testing.assert_frame_equal(a, b)

    def test_baseline_ignores_states(self):
        result = run_baseline_random(small_config())
        self.assertIsNone(result.qtable)
        self.assertEqual(len(result.steps), 12)

    def test_impossible_faults_are_recorded_as_not_enacted(self):
        cfg = small_config(faults=["RestartNode", "ResumeNode"], budget_steps=4)
        result = run_baseline_random(cfg)
        self.assertFalse(any(s.enacted for s in result.steps))

    def test_budget_stops_mid_schedule(self):
        result = run_campaign(small_config(budget_steps=6))
        self.assertEqual([s.schedule for s in result.steps], [0, 0, 0, 0, 1, 1])

    def test_campaign_survives_a_node_abort(self):
        original = RaftNode._on_append_reply
        calls = {"n": 0}

        def abort_on_fortieth_reply(node, ctx, src, msg):
            calls["n"] += 1
            if calls["n"] == 40:
                raise ProcessAbort("injected abort")
            return original(node, ctx, src, msg)

        with patch.object(RaftNode, "_on_append_reply", abort_on_fortieth_reply):
            result = run_campaign(small_config(budget_steps=8))
        self.assertEqual(len(result.steps), 8)
        fired = [f for f in result.findings if f.kind == FindingKind.ASSERTION_FIRED]
        self.assertEqual([f.detail for f in fired], ["injected abort"])

    def test_steady_summaries(self):
        summaries = collect_steady_summaries(small_config(), 4)
        self.assertEqual(len(summaries), 4)
        self.assertFalse(any(s.is_empty() for s in summaries))


class TestCampaignDirectory(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.out = Path(self._tmp.name) / "seed-3"

    def tearDown(self):
        self._tmp.cleanup()

    def test_outputs(self):
        Campaign(small_config(), out_dir=self.out).run()
        for name in ("config.json", "registry.json", "events.jsonl", "network.jsonl", "steps.csv",
                     "states.csv", "qtable.csv", "findings.json", "checkpoint.db"):
            self.assertTrue((self.out / name).exists(), name)
        doc = json.loads((self.out / "config.json").read_text(encoding="utf-8"))
        self.assertEqual(doc["agent"], "guided")
        steps = pd.read_csv(self.out / "steps.csv")
        self.assertEqual(len(steps), 12)
        qtable = pd.read_csv(self.out / "qtable.csv")
        self.assertEqual(list(qtable.columns)[:3], ["state_id", "PartitionRandomHalves", "HealNetwork"])

    def test_replay_reproduces(self):
        recorded = Campaign(small_config(), out_dir=self.out).run()
        replayed = replay(self.out)
        self.assertEqual([s.digest for s in replayed.steps], [s.digest for s in recorded.steps])

    def test_tampered_digest_diverges(self):
        Campaign(small_config(), out_dir=self.out).run()
        steps = pd.read_csv(self.out / "steps.csv", dtype={"digest": str})
        steps.loc[5, "digest"] = "0" * 64
        steps.to_csv(self.out / "steps.csv", index=False)
        with self.assertRaises(ReplayDivergenceError) as ctx:
            replay(self.out)
        self.assertEqual(ctx.exception.step, 5)
        self.assertTrue(ctx.exception.detail.startswith("digest"))

    def test_tampered_action_diverges(self):
        Campaign(small_config(), out_dir=self.out).run()
        steps = pd.read_csv(self.out / "steps.csv", dtype={"digest": str})
        steps.loc[2, "action"] = "Meteor"
        steps.to_csv(self.out / "steps.csv", index=False)
        with self.assertRaises(ReplayDivergenceError) as ctx:
            replay(self.out)
        self.assertEqual(ctx.exception.step, 2)

    def test_version_mismatch(self):
        Campaign(small_config(budget_steps=2), out_dir=self.out).run()
        doc = json.loads((self.out / "config.json").read_text(encoding="utf-8"))
        doc["tool_version"] = "0.0.1"
        (self.out / "config.json").write_text(json.dumps(doc), encoding="utf-8")
        with self.assertRaises(VersionMismatchError):
            replay(self.out)

    def test_not_a_campaign_directory(self):
        with self.assertRaises(ConfigError):
            replay(self._tmp.name)

    def test_resume_matches_uninterrupted_run(self):
        Campaign(small_config(budget_steps=8), out_dir=self.out).run()
        resumed = Campaign(small_config(), out_dir=self.out).run(resume=True)
        straight = run_campaign(small_config())
        pd.testing.assert_frame_equal(
            resumed.steps_frame().astype(straight.steps_frame().dtypes.to_dict()),
            straight.steps_frame(),
        )
        self.assertEqual(len(resumed.registry), len(straight.registry))

    def test_resume_refuses_other_agent(self):
        Campaign(small_config(budget_steps=4), out_dir=self.out).run()
        with self.assertRaises(ConfigError) as ctx:
            Campaign(small_config(), baseline=True, out_dir=self.out).run(resume=True)
        self.assertEqual(ctx.exception.key, "agent")

    def test_missing_checkpoint(self):
        self.out.mkdir(parents=True)
        with self.assertRaises(CheckpointError):
            CheckpointStore(self.out / "checkpoint.db").load()


class TestFindingReplay(unittest.TestCase):
    def test_finding_reproduces_from_its_prefix(self):
        cfg = small_config(oracle_keywords=["snapshot"], budget_steps=4,
                           faults=["CrashNode", "RestartNode", "HealNetwork", "NoOp"])
        result = run_campaign(cfg)
        with_prefix = [f for f in result.findings if f.fault_prefix]
        self.assertTrue(with_prefix)
        self.assertTrue(reproduces(with_prefix[-1], cfg))


@unittest.skipUnless(os.getenv("CAUSEWAY_SLOW_TESTS"), "set CAUSEWAY_SLOW_TESTS=1 for multi-seed campaigns")
class TestMultiSeedCampaigns(unittest.TestCase):
    def test_guided_reaches_more_states(self):
        guided, baseline = [], []
        for seed in range(10):
            cfg = parse_config({"seed": seed, "budget_steps": 600})
            guided.append(run_campaign(cfg).distinct_states)
            baseline.append(run_baseline_random(cfg).distinct_states)
        self.assertLess(mann_whitney_greater(guided, baseline), 0.05)
        self.assertGreaterEqual(vargha_delaney_a12(guided, baseline), 0.7)

    def test_guided_campaign_trips_the_rollback_assertion(self):
        fired = 0
        for seed in range(10):
            cfg = parse_config({"seed": seed, "budget_steps": 2000, "bugs": ["membership_rollback"]})
            result = run_campaign(cfg)
            self.assertEqual(len(result.steps), 2000)
            fired += any(f.kind == FindingKind.ASSERTION_FIRED for f in result.findings)
        self.assertGreaterEqual(fired, 8)


if __name__ == '__main__':
    unittest.main()
