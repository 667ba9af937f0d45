"""
Campaign reports: distinct-state curves, guided-vs-baseline statistics and
bug time-to-discovery, written as CSV/JSON plus one SVG chart.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd
import scipy.stats

from models.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class CampaignSummary:
    name: str
    agent: str
    steps: int
    curve: np.ndarray
    first_finding_step: Optional[int]
    first_assertion_step: Optional[int]

    @property
    def distinct_states(self) -> int:
        return int(self.curve[-1]) if len(self.curve) else 0


def distinct_curve(steps: pd.DataFrame, states: pd.DataFrame) -> np.ndarray:
    """Number of distinct states known after each step"""
    n = len(steps)
    first_seen = np.sort(states["first_seen_step"].to_numpy())
    return np.searchsorted(first_seen, np.arange(n), side="right").astype(int)


def load_campaign(campaign_dir) -> CampaignSummary:
    campaign_dir = Path(campaign_dir)
    try:
        config = json.loads((campaign_dir / "config.json").read_text(encoding="utf-8"))
        steps = pd.read_csv(campaign_dir / "steps.csv")
        states = pd.read_csv(campaign_dir / "states.csv")
        findings = json.loads((campaign_dir / "findings.json").read_text(encoding="utf-8"))["findings"]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{campaign_dir} is not a complete campaign directory: {exc}",
                          key="campaign_dir") from exc
    first_any = min((f["step"] for f in findings), default=None)
    first_assertion = min((f["step"] for f in findings if f["kind"] == "AssertionFired"), default=None)
    return CampaignSummary(campaign_dir.name, config.get("agent", "guided"), len(steps),
                           distinct_curve(steps, states), first_any, first_assertion)


def aggregate_curves(curves: Sequence[np.ndarray]) -> pd.DataFrame:
    """Mean, min and max per step; shorter curves are held at their last value"""
    length = max(len(c) for c in curves)
    padded = np.array([np.concatenate([c, np.full(length - len(c), c[-1] if len(c) else 0)]) for c in curves])
    return pd.DataFrame({
        "step": np.arange(length),
        "mean": padded.mean(axis=0),
        "min": padded.min(axis=0),
        "max": padded.max(axis=0),
    })


def vargha_delaney_a12(a: Sequence[float], b: Sequence[float]) -> float:
    """Probability that a value drawn from a exceeds one drawn from b (ties count half)"""
    a = np.asarray(a, dtype=float)[:, None]
    b = np.asarray(b, dtype=float)[None, :]
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    return float(((a > b).sum() + 0.5 * (a == b).sum()) / (a.size * b.size))


def mann_whitney_greater(a: Sequence[float], b: Sequence[float]) -> float:
    """One-sided p-value for a being stochastically greater than b"""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    if np.ptp(np.concatenate([np.asarray(a, float), np.asarray(b, float)])) == 0:
        return 1.0
    return float(scipy.stats.mannwhitneyu(a, b, alternative="greater").pvalue)


def steps_to_reach(curve: np.ndarray, target: float) -> Optional[int]:
    hits = np.flatnonzero(np.asarray(curve) >= target)
    return int(hits[0]) + 1 if hits.size else None


def speedup(guided_mean: np.ndarray, baseline_mean: np.ndarray) -> Dict[str, Optional[float]]:
    target = float(guided_mean[-1])
    guided_steps = steps_to_reach(guided_mean, target)
    baseline_steps = steps_to_reach(baseline_mean, target)
    return {
        "target_states": target,
        "guided_steps": guided_steps,
        "baseline_steps": baseline_steps,
        "speedup": (baseline_steps / guided_steps) if baseline_steps and guided_steps else None,
    }


def plot_curves(groups: Dict[str, pd.DataFrame], path):
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, frame in sorted(groups.items()):
        line, = ax.plot(frame["step"], frame["mean"], label=name)
        ax.fill_between(frame["step"], frame["min"], frame["max"], alpha=0.2, color=line.get_color())
    ax.set_xlabel("steps")
    ax.set_ylabel("distinct states")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def build_report(campaign_dirs: Sequence, out_dir) -> Dict:
    if not campaign_dirs:
        raise ConfigError("no campaign directories given", key="campaign_dirs")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = [load_campaign(d) for d in campaign_dirs]

    pd.DataFrame([{
        "campaign": s.name,
        "agent": s.agent,
        "steps": s.steps,
        "distinct_states": s.distinct_states,
        "first_finding_step": s.first_finding_step,
        "first_assertion_step": s.first_assertion_step,
    } for s in summaries]).to_csv(out_dir / "summary.csv", index=False)

    groups: Dict[str, pd.DataFrame] = {}
    for agent in sorted({s.agent for s in summaries}):
        groups[agent] = aggregate_curves([s.curve for s in summaries if s.agent == agent])
    frames = [frame.assign(agent=agent) for agent, frame in sorted(groups.items())]
    pd.concat(frames)[["agent", "step", "mean", "min", "max"]].to_csv(out_dir / "curves.csv", index=False)
    plot_curves(groups, out_dir / "distinct_states.svg")

    stats: Dict = {"campaigns": len(summaries)}
    if "guided" in groups and "random" in groups:
        guided = [s.distinct_states for s in summaries if s.agent == "guided"]
        baseline = [s.distinct_states for s in summaries if s.agent == "random"]
        stats["mann_whitney_p"] = mann_whitney_greater(guided, baseline)
        stats["a12"] = vargha_delaney_a12(guided, baseline)
        stats.update(speedup(groups["guided"]["mean"].to_numpy(), groups["random"]["mean"].to_numpy()))
    (out_dir / "stats.json").write_text(json.dumps(stats, indent=2), encoding="utf-8")
    logger.info("report over %d campaigns written to %s", len(summaries), out_dir)
    return stats
