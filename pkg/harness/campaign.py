"""
Campaign driver: schedules of fault steps against a freshly reset cluster.

Per step the agent picks a fault for the current abstract state, the fault is
enacted, the cluster runs for one window, the mediator rebuilds the timeline
and extends the schedule's summary, the summary is classified into an abstract
state, and the agent learns from the reward before choosing the next fault.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import Config
from models.database import CheckpointStore
from models.errors import ConfigError, ReplayDivergenceError
from models.events import trace_digest, write_trace
from netsim.faults import FaultAction, FaultTag, NodeStatus, expand_alphabet
from netsim.simulator import SimConfig
from sut.cluster import Cluster
from sut.registry import RAFT_REGISTRY
from sut.workload import WorkloadSpec
from mediator.abstraction import EventHistory, IncrementalAbstraction
from mediator.novelty import StateRegistry, StateSignature, signature
from mediator.timeline import Timeline
from agents.base_agent import BaseAgent
from agents.q_learning_agent import QLearningAgent, QTable, reward
from agents.random_agent import RandomAgent
from harness.oracles import OracleChannel, OracleFinding, aggregate_findings

logger = logging.getLogger(__name__)

INIT_STATE = 0


class CampaignConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: int = Config.CONFIG_SCHEMA_VERSION
    seed: int = Field(default=0, ge=0)
    sim: SimConfig = Field(default_factory=SimConfig)
    faults: List[str] = Field(default_factory=lambda: list(Config.FAULT_TAGS))
    steps_per_schedule: int = Field(default=Config.STEPS_PER_SCHEDULE, ge=1)
    window_ns: int = Field(default=Config.WINDOW_NS, gt=0)
    reset_ns: int = Field(default=Config.RESET_NS, gt=0)
    budget_steps: int = Field(default=120, ge=1)
    epsilon: float = Field(default=Config.EPSILON, gt=0.0, le=1.0)
    minhash_k: int = Field(default=Config.MINHASH_K, ge=1)
    hash_seed: int = Field(default=Config.HASH_SEED, ge=0)
    alpha: float = Field(default=Config.ALPHA, gt=0.0, le=1.0)
    gamma: float = Field(default=Config.GAMMA, gt=0.0, le=1.0)
    oracle_keywords: List[str] = Field(default_factory=lambda: list(Config.ORACLE_KEYWORDS))
    max_leaderless_windows: int = Field(default=Config.MAX_LEADERLESS_WINDOWS, ge=1)
    workload: WorkloadSpec = Field(default_factory=WorkloadSpec)
    bugs: List[str] = Field(default_factory=list)

    @field_validator("schema_version")
    @classmethod
    def _check_schema(cls, v):
        if v != Config.CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {Config.CONFIG_SCHEMA_VERSION}")
        return v

    @field_validator("faults")
    @classmethod
    def _check_faults(cls, v):
        if not v:
            raise ValueError("fault alphabet is empty")
        known = {t.value for t in FaultTag}
        for name in v:
            if name not in known:
                raise ValueError(f"unknown fault '{name}'")
        return v

    @field_validator("bugs")
    @classmethod
    def _check_bugs(cls, v):
        for name in v:
            if name not in Config.SEEDED_BUGS:
                raise ValueError(f"unknown seeded bug '{name}'")
        return v

    @model_validator(mode="after")
    def _check_window(self):
        if self.window_ns <= self.sim.max_latency_ns:
            raise ValueError("window_ns must exceed the maximum message latency")
        return self

    def alphabet(self) -> List[FaultAction]:
        return expand_alphabet(self.faults, self.sim.node_count)


def _dotted(loc) -> str:
    return ".".join(str(part) for part in loc)


def parse_config(data: dict) -> CampaignConfig:
    try:
        return CampaignConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = _dotted(first["loc"])
        raise ConfigError(f"invalid config at '{key}': {first['msg']}", key=key) from exc


def load_config(path) -> CampaignConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data)


def schedule_seed(seed: int, schedule: int) -> int:
    return int(np.random.SeedSequence([seed, schedule]).generate_state(1, dtype=np.uint64)[0])


@dataclass
class StepRecord:
    schedule: int
    step: int
    step_in_schedule: int
    prior_state: int
    action: str
    enacted: bool
    next_state: int
    was_new: bool
    reward: float
    findings: int
    digest: str


STEP_COLUMNS = [f for f in StepRecord.__dataclass_fields__]


@dataclass
class CampaignResult:
    registry: StateRegistry
    agent: BaseAgent
    steps: List[StepRecord] = field(default_factory=list)
    findings: List[OracleFinding] = field(default_factory=list)

    @property
    def qtable(self):
        return getattr(self.agent, "table", None)

    @property
    def distinct_states(self) -> int:
        return len(self.registry)

    def steps_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(s) for s in self.steps], columns=STEP_COLUMNS)


@dataclass
class Observation:
    summary: EventHistory
    digest: str
    events: list
    logs: list
    assertions: list
    ops: list


class Campaign:
    """One fuzzing campaign; `fault_plan` (action labels per step) replaces the agent's choices when replaying"""

    def __init__(self, cfg: CampaignConfig, baseline: bool = False, out_dir=None,
                 fault_plan: Optional[Sequence[str]] = None,
                 on_step: Optional[Callable[[StepRecord], None]] = None, retire_graphs: bool = True):
        self.cfg = cfg
        self.baseline = baseline
        self.alphabet = cfg.alphabet()
        self.labels = [a.label for a in self.alphabet]
        self.out_dir = Path(out_dir) if out_dir else None
        self.fault_plan = list(fault_plan) if fault_plan is not None else None
        self.on_step = on_step
        self.retire_graphs = retire_graphs
        self.last_graph = None
        if baseline:
            self.agent: BaseAgent = RandomAgent(self.alphabet, seed=cfg.seed)
        else:
            self.agent = QLearningAgent(self.alphabet, seed=cfg.seed, alpha=cfg.alpha, gamma=cfg.gamma)
        self.registry = StateRegistry()
        self.result = CampaignResult(self.registry, self.agent)
        self.schedule = 0
        self.step = 0

    @property
    def agent_kind(self) -> str:
        return "random" if self.baseline else "guided"

    # -- persistence ------------------------------------------------------

    def _prepare_out_dir(self):
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        doc = self.cfg.model_dump(mode="json")
        doc["tool_version"] = Config.TOOL_VERSION
        doc["agent"] = self.agent_kind
        (self.out_dir / "config.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
        (self.out_dir / "registry.json").write_text(RAFT_REGISTRY.to_json(), encoding="utf-8")
        for name in ("events.jsonl", "network.jsonl"):
            (self.out_dir / name).write_text("", encoding="utf-8")

    def _checkpoint(self):
        if self.out_dir is None:
            return
        store = CheckpointStore(self.out_dir / "checkpoint.db")
        states = [
            {"state_id": e.state_id, "first_seen_step": e.first_seen_step,
             "item_count": e.signature.item_count, "minima": e.signature.to_bytes()}
            for e in self.registry.entries
        ]
        q_rows = self.result.qtable.to_dict() if self.result.qtable is not None else {}
        store.save(self.schedule, self.step, self.agent_kind, self.agent.rng_state(), states, q_rows)
        store.dispose()

    def resume(self):
        """Continue from the checkpoint and outputs in out_dir"""
        store = CheckpointStore(self.out_dir / "checkpoint.db")
        data = store.load()
        store.dispose()
        if data["agent_kind"] != self.agent_kind:
            raise ConfigError(f"checkpoint was written by a {data['agent_kind']} campaign", key="agent")
        for state in data["states"]:
            sig = StateSignature.from_bytes(state["minima"], self.cfg.minhash_k, self.cfg.hash_seed,
                                            state["item_count"])
            self.registry.add(sig, state["first_seen_step"])
        if isinstance(self.agent, QLearningAgent):
            self.agent.table = QTable.from_dict(data["q_rows"], self.cfg.alpha, self.cfg.gamma, len(self.alphabet))
        self.agent.restore_rng(data["rng_state"])
        self.schedule = data["schedule_index"]
        self.step = data["steps_done"]
        steps_path = self.out_dir / "steps.csv"
        if steps_path.exists():
            frame = pd.read_csv(steps_path, dtype={"digest": str})
            frame = frame[frame["step"] < self.step]
            self.result.steps = [StepRecord(**row) for row in frame.to_dict("records")]
        findings_path = self.out_dir / "findings.json"
        if findings_path.exists():
            doc = json.loads(findings_path.read_text(encoding="utf-8"))
            self.result.findings = [OracleFinding.from_dict(f) for f in doc.get("findings", [])
                                    if f["step"] < self.step]
        logger.info("resuming at schedule %d, step %d", self.schedule, self.step)

    def write_outputs(self):
        if self.out_dir is None:
            return
        self.result.steps_frame().to_csv(self.out_dir / "steps.csv", index=False)
        self.registry.to_csv(self.out_dir / "states.csv")
        if self.result.qtable is not None:
            self.result.qtable.to_csv(self.out_dir / "qtable.csv", self.labels)
        else:
            pd.DataFrame(columns=["state_id"] + self.labels).to_csv(self.out_dir / "qtable.csv", index=False)
        doc = {
            "findings": [f.to_dict() for f in self.result.findings],
            "aggregate": aggregate_findings(self.result.findings),
        }
        (self.out_dir / "findings.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")

    # -- loop -------------------------------------------------------------

    def new_cluster(self, schedule: int) -> Cluster:
        sim_cfg = self.cfg.sim.model_copy(update={"rng_seed": schedule_seed(self.cfg.seed, schedule)})
        return Cluster(sim_cfg, self.cfg.workload, self.cfg.bugs,
                       workload_seed=schedule_seed(self.cfg.seed + 1, schedule))

    def observe(self, cluster: Cluster, timeline: Timeline, abstraction: IncrementalAbstraction,
                events: list) -> Observation:
        sim = cluster.sim
        for boot, clock in sim.drain_announcements():
            timeline.announce(boot, clock)
        for batch in sim.drain_batches():
            timeline.ingest(batch)
        for node in range(sim.config.node_count):
            if sim.state.node_status[node] == NodeStatus.CRASHED:
                timeline.mark_dead(node)
        graph = timeline.build_prefix_closed()
        summary = abstraction.extend(graph)
        self.last_graph = graph
        if self.retire_graphs:
            timeline.retire()
        if self.out_dir is not None:
            write_trace(self.out_dir / "events.jsonl", events, append=True)
        return Observation(summary, trace_digest(events), events, sim.drain_logs(),
                           sim.drain_assertions(), cluster.workload.drain_history())

    def _oracles(self, channel: OracleChannel, cluster: Cluster, obs: Observation,
                 prefix: List[str]) -> List[OracleFinding]:
        healthy = cluster.state.fully_connected() and all(
            s == NodeStatus.RUNNING for s in cluster.state.node_status)
        found = channel.check(obs.logs, obs.assertions, obs.ops, bool(cluster.leader_claimants()), healthy)
        findings = [OracleFinding(kind, node, self.step, detail, self.schedule, self.cfg.seed, tuple(prefix))
                    for kind, node, detail in found]
        for f in findings:
            logger.warning("finding %s at step %d node %s: %s", f.kind.value, f.step, f.node, f.detail)
        return findings

    def _next_action(self, state: int, mask: np.ndarray) -> int:
        if self.fault_plan is None:
            return self.agent.select(state, mask)
        label = self.fault_plan[self.step]
        if label not in self.labels:
            raise ReplayDivergenceError(f"recorded fault '{label}' is not in the alphabet", step=self.step,
                                        detail=label)
        return self.labels.index(label)

    def run_schedule(self):
        cfg = self.cfg
        cluster = self.new_cluster(self.schedule)
        timeline = Timeline(range(cfg.sim.node_count), cfg.sim.skew_bound_ns)
        abstraction = IncrementalAbstraction(EventHistory)
        channel = OracleChannel(keywords=cfg.oracle_keywords, max_leaderless_windows=cfg.max_leaderless_windows)

        events = cluster.run_window(cfg.reset_ns)
        obs = self.observe(cluster, timeline, abstraction, events)
        if not self.registry.entries:
            sig = signature(obs.summary, cfg.minhash_k, cfg.hash_seed)
            self.registry.classify(sig, cfg.epsilon, self.step)
            self.agent.observe_state(INIT_STATE)
        self.result.findings.extend(self._oracles(channel, cluster, obs, []))
        abstraction.rebase()

        state = INIT_STATE
        prefix: List[str] = []
        for i in range(cfg.steps_per_schedule):
            if self.step >= cfg.budget_steps:
                break
            mask = cluster.state.action_mask(self.alphabet)
            index = self._next_action(state, mask)
            fault = self.alphabet[index]
            enacted = cluster.enact(fault)
            prefix.append(fault.label)
            events = cluster.run_window(cfg.window_ns)
            obs = self.observe(cluster, timeline, abstraction, events)
            sig = signature(obs.summary, cfg.minhash_k, cfg.hash_seed)
            next_state, was_new = self.registry.classify(sig, cfg.epsilon, self.step)
            if was_new:
                self.agent.observe_state(next_state)
            r = reward(state, index, next_state, was_new)
            self.agent.learn(state, index, r, next_state)
            findings = self._oracles(channel, cluster, obs, prefix)
            self.result.findings.extend(findings)
            record = StepRecord(self.schedule, self.step, i, state, fault.label, enacted,
                                next_state, was_new, r, len(findings), obs.digest)
            self.result.steps.append(record)
            logger.info("schedule %d step %d: %s -> state %d%s reward %.0f",
                        self.schedule, self.step, fault.label, next_state, " (new)" if was_new else "", r)
            if self.on_step is not None:
                self.on_step(record)
            state = next_state
            self.step += 1

        if self.out_dir is not None:
            cluster.sim.write_network_log(self.out_dir / "network.jsonl", append=True)
        self.schedule += 1

    def run(self, resume: bool = False) -> CampaignResult:
        if resume:
            self.resume()
        else:
            self._prepare_out_dir()
        while self.step < self.cfg.budget_steps:
            self.run_schedule()
            self._checkpoint()
            self.write_outputs()
        self.write_outputs()
        logger.info("campaign done: %d steps, %d distinct states, %d findings",
                    self.step, len(self.registry), len(self.result.findings))
        return self.result


def run_campaign(cfg: CampaignConfig, out_dir=None, resume: bool = False,
                 fault_plan: Optional[Sequence[str]] = None) -> CampaignResult:
    return Campaign(cfg, baseline=False, out_dir=out_dir, fault_plan=fault_plan).run(resume)


def run_baseline_random(cfg: CampaignConfig, out_dir=None, resume: bool = False,
                        fault_plan: Optional[Sequence[str]] = None) -> CampaignResult:
    return Campaign(cfg, baseline=True, out_dir=out_dir, fault_plan=fault_plan).run(resume)


def collect_steady_summaries(cfg: CampaignConfig, windows: int) -> List[EventHistory]:
    """Per-window summaries of a fault-free run under the configured constant load"""
    campaign = Campaign(cfg)
    cluster = campaign.new_cluster(0)
    timeline = Timeline(range(cfg.sim.node_count), cfg.sim.skew_bound_ns)
    abstraction = IncrementalAbstraction(EventHistory)
    campaign.observe(cluster, timeline, abstraction, cluster.run_window(cfg.reset_ns))
    summaries = []
    for _ in range(windows):
        abstraction.rebase()
        obs = campaign.observe(cluster, timeline, abstraction, cluster.run_window(cfg.window_ns))
        summaries.append(obs.summary)
    return summaries
