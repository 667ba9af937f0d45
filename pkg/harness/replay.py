"""
Deterministic replay of a recorded campaign directory.

The recorded fault column of steps.csv drives the replay instead of the
agent; every replayed step must reproduce the recorded states, rewards and
window trace digest.
"""

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from config import Config
from models.errors import ConfigError, ReplayDivergenceError, VersionMismatchError
from harness.campaign import Campaign, CampaignConfig, CampaignResult, StepRecord, parse_config
from harness.oracles import OracleFinding

logger = logging.getLogger(__name__)

COMPARED_FIELDS = ("schedule", "step", "prior_state", "action", "enacted", "next_state",
                   "was_new", "reward", "findings", "digest")


def load_recording(campaign_dir) -> Tuple[CampaignConfig, bool, pd.DataFrame]:
    campaign_dir = Path(campaign_dir)
    config_path = campaign_dir / "config.json"
    steps_path = campaign_dir / "steps.csv"
    if not config_path.exists() or not steps_path.exists():
        raise ConfigError(f"{campaign_dir} is not a campaign directory", key="campaign_dir")
    doc = json.loads(config_path.read_text(encoding="utf-8"))
    version = doc.pop("tool_version", None)
    if version != Config.TOOL_VERSION:
        raise VersionMismatchError(
            f"campaign recorded with version {version}, this is {Config.TOOL_VERSION}"
        )
    baseline = doc.pop("agent", "guided") == "random"
    cfg = parse_config(doc)
    steps = pd.read_csv(steps_path, dtype={"digest": str, "action": str})
    return cfg, baseline, steps


def first_divergence(recorded: Sequence[Dict], replayed: Sequence[StepRecord]) -> Optional[Tuple[int, str]]:
    for want, got in zip(recorded, replayed):
        got_dict = asdict(got)
        for name in COMPARED_FIELDS:
            a, b = want[name], got_dict[name]
            if isinstance(b, float):
                same = abs(float(a) - b) < 1e-12
            elif isinstance(b, bool):
                same = bool(a) == b
            else:
                same = str(a) == str(b)
            if not same:
                return got.step, f"{name}: recorded {a!r}, replayed {b!r}"
    if len(recorded) != len(replayed):
        return min(len(recorded), len(replayed)), f"recorded {len(recorded)} steps, replayed {len(replayed)}"
    return None


def replay(campaign_dir) -> CampaignResult:
    cfg, baseline, steps = load_recording(campaign_dir)
    recorded = steps.to_dict("records")
    plan = [r["action"] for r in recorded]
    cfg = cfg.model_copy(update={"budget_steps": len(plan)})
    logger.info("replaying %d steps from %s", len(plan), campaign_dir)
    result = Campaign(cfg, baseline=baseline, fault_plan=plan).run()
    divergence = first_divergence(recorded, result.steps)
    if divergence is not None:
        step, detail = divergence
        raise ReplayDivergenceError(f"replay diverged at step {step}: {detail}", step=step, detail=detail)
    return result


def replay_schedule(cfg: CampaignConfig, schedule: int, fault_prefix: Sequence[str],
                    baseline: bool = False) -> List[OracleFinding]:
    """Re-run one schedule with the given fault prefix and return its findings"""
    cfg = cfg.model_copy(update={"steps_per_schedule": len(fault_prefix) or 1,
                                 "budget_steps": len(fault_prefix) or 1})
    campaign = Campaign(cfg, baseline=baseline, fault_plan=list(fault_prefix) or None)
    campaign.schedule = schedule
    campaign.run_schedule()
    return campaign.result.findings


def reproduces(finding: OracleFinding, cfg: CampaignConfig, baseline: bool = False) -> bool:
    replayed = replay_schedule(cfg, finding.schedule, finding.fault_prefix, baseline)
    return any(f.kind == finding.kind and f.node == finding.node and f.detail == finding.detail
               for f in replayed)
