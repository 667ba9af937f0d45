import logging
from typing import Dict, FrozenSet, Iterable, List

from models.errors import ConfigError
from models.events import NodeId
from netsim.faults import FaultAction, NetworkState, NodeStatus
from netsim.simulator import SimConfig, Simulator
from sut.raftlite import RaftNode, Role
from sut.workload import ClientWorkload, WorkloadSpec

logger = logging.getLogger(__name__)

KNOWN_BUGS = frozenset({"membership_rollback", "even_split_vote", "stale_read"})


class Cluster:
    """A Raft-like cluster running in the simulator, with observers and a client workload attached"""

    def __init__(self, sim_config: SimConfig, workload: WorkloadSpec = None,
                 bugs: Iterable[str] = (), workload_seed: int = 0):
        bugs = frozenset(bugs)
        unknown = bugs - KNOWN_BUGS
        if unknown:
            raise ConfigError(f"unknown seeded bugs: {sorted(unknown)}", key="bugs")
        self.bugs: FrozenSet[str] = bugs
        members = range(sim_config.node_count)
        self.nodes: Dict[NodeId, RaftNode] = {n: RaftNode(n, members, bugs) for n in members}
        self.sim = Simulator(sim_config, self.nodes)
        self.workload = ClientWorkload(self.sim, workload or WorkloadSpec(), workload_seed,
                                       self.leader_claimants)
        self.sim.client_handler = self.workload.on_response
        self.sim.membership_hook = self.workload.request_removal

    @property
    def state(self) -> NetworkState:
        return self.sim.state

    def leader_claimants(self) -> List[NodeId]:
        return [n for n, node in self.nodes.items()
                if node.role == Role.LEADER and self.sim.state.node_status[n] == NodeStatus.RUNNING]

    def running(self) -> List[NodeId]:
        return [n for n in self.nodes if self.sim.state.node_status[n] == NodeStatus.RUNNING]

    def enact(self, fault: FaultAction) -> bool:
        """Apply a fault; returns False (and changes nothing) if it is impossible right now"""
        if not self.sim.state.is_possible(fault):
            logger.info("fault %s impossible in current state, treated as no-op", fault.label)
            return False
        self.sim.enact(fault)
        return True

    def run_window(self, duration_ns: int):
        self.sim.start()
        self.workload.schedule_window(self.sim.now, duration_ns)
        return self.sim.run_window(duration_ns)

    def run_quiet(self, duration_ns: int):
        """Advance time without client load"""
        return self.sim.run_window(duration_ns)

    def describe(self) -> List[Dict]:
        return [node.describe() for node in self.nodes.values()]
