"""
Scripted regression traces for the seeded defects.

The membership-rollback trace drives a five-node cluster through the exact
interleaving that loses the committed configuration: a configuration change
reaches one follower only, that follower snapshots while the change is still
uncommitted, the old leader crashes and the new leader's log forces the
follower to delete the change and roll its membership back.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from config import Config
from mediator.timeline import Timeline
from models.events import Event, EventTag
from netsim.faults import FaultAction, FaultTag, NodeStatus
from netsim.simulator import AssertionRecord, ClientRequest, SimConfig
from sut.cluster import Cluster
from sut.registry import RAFT_REGISTRY
from sut.workload import WorkloadSpec

logger = logging.getLogger(__name__)

MS = 1_000_000


@dataclass
class ScenarioResult:
    assertions: List[AssertionRecord]
    events: List[Event]
    logs: List[Tuple[int, int, str]]
    nodes: Dict[str, int] = field(default_factory=dict)
    linked_receives: int = 0

    @property
    def fired(self) -> bool:
        return bool(self.assertions)

    def code_labels(self, node: int) -> List[str]:
        return [RAFT_REGISTRY.label(ev.kind.code_id) for ev in self.events
                if ev.node == node and ev.kind.tag == EventTag.CODE_EVENT]


def rollback_trigger_seen(labels: List[str]) -> bool:
    """ConfigChangeAppended, then TakeSnapshot, then DeleteConflictingEntries, in that order"""
    wanted = ["ConfigChangeAppended", "TakeSnapshot", "DeleteConflictingEntries"]
    pos = 0
    for label in labels:
        if label == wanted[pos]:
            pos += 1
            if pos == len(wanted):
                return True
    return False


class _Script:
    def __init__(self, cluster: Cluster):
        self.cluster = cluster
        self.sim = cluster.sim
        self.events: List[Event] = []
        self.logs: List[Tuple[int, int, str]] = []
        self.assertions: List[AssertionRecord] = []
        self._next_request = 1_000_000
        self.timeline = Timeline(range(self.sim.config.node_count), self.sim.config.skew_bound_ns)
        self.linked_receives = 0

    def run(self, duration_ns: int):
        self.events.extend(self.cluster.run_quiet(duration_ns))
        self.logs.extend(self.sim.drain_logs())
        self.assertions.extend(self.sim.drain_assertions())
        self._observe()

    def _observe(self):
        """Feed the mediator the way a campaign does"""
        for boot, clock in self.sim.drain_announcements():
            self.timeline.announce(boot, clock)
        for batch in self.sim.drain_batches():
            self.timeline.ingest(batch)
        for node, status in enumerate(self.sim.state.node_status):
            if status == NodeStatus.CRASHED:
                self.timeline.mark_dead(node)
        graph = self.timeline.build_prefix_closed()
        self.linked_receives += sum(1 for v in graph.delta if graph.event(v).is_recv)
        self.timeline.retire()

    def submit(self, node: int, op: str, key=None, value=None):
        request = ClientRequest(self._next_request, op, key, value, node, self.sim.now)
        self._next_request += 1
        self.sim.submit_client(node, request)

    def wait_for_leader(self, limit_ns: int = 5000 * MS) -> int:
        waited = 0
        while waited < limit_ns:
            self.run(100 * MS)
            waited += 100 * MS
            leaders = self.cluster.leader_claimants()
            if len(leaders) == 1:
                return leaders[0]
        raise RuntimeError("no single leader emerged")

    def result(self, **nodes) -> ScenarioResult:
        return ScenarioResult(self.assertions, self.events, self.logs, dict(nodes), self.linked_receives)


def membership_rollback_scenario(bugs=("membership_rollback",), seed: int = 3) -> ScenarioResult:
    cluster = Cluster(SimConfig(node_count=5, rng_seed=seed), WorkloadSpec(requests_per_window=0), bugs)
    script = _Script(cluster)
    leader = script.wait_for_leader()
    follower = min(n for n in cluster.nodes if n != leader)
    victim = max(n for n in cluster.nodes if n not in (leader, follower))
    others = [n for n in cluster.nodes if n not in (leader, follower)]
    f = cluster.nodes[follower]

    # one committed entry past the follower's snapshot, everything committed
    for _ in range(2 * Config.SNAPSHOT_THRESHOLD):
        if f.last_index - f.snapshot.last_index == 1 and f.commit_index == f.last_index:
            break
        script.submit(leader, "Write", "k0", script._next_request)
        script.run(200 * MS)
    else:
        raise RuntimeError("follower did not settle one entry past its snapshot")

    # leader and follower cut off together; two writes and a membership change stay uncommitted
    cluster.state.sever([leader, follower], others)
    script.submit(leader, "Write", "k0", script._next_request)
    script.submit(leader, "Write", "k1", script._next_request)
    script.submit(leader, "RemoveNode", value=victim)
    script.run(100 * MS)

    cluster.enact(FaultAction(FaultTag.CRASH_NODE, leader))
    script.run(1000 * MS)
    cluster.enact(FaultAction(FaultTag.HEAL_NETWORK))
    script.run(3000 * MS)
    logger.info("membership rollback scenario: %d assertion(s)", len(script.assertions))
    return script.result(leader=leader, follower=follower, victim=victim)


def split_vote_scenario(bugs=("even_split_vote",), seed: int = 1) -> ScenarioResult:
    """Four nodes split 2/2 from boot: with ties counted as a majority each half elects a leader"""
    cluster = Cluster(SimConfig(node_count=4, rng_seed=seed), WorkloadSpec(requests_per_window=0), bugs)
    script = _Script(cluster)
    cluster.sim.start()
    cluster.state.sever([0, 1], [2, 3])
    script.run(1000 * MS)
    return script.result()
