"""
Client workload: a seeded stream of Write/Read requests issued against the
cluster during every window, plus the client session history the consistency
oracles check.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import Config
from models.events import EventKind, NodeId
from netsim.faults import NodeStatus
from netsim.simulator import ClientRequest, Simulator

logger = logging.getLogger(__name__)


class WorkloadSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    requests_per_window: int = Field(default=Config.REQUESTS_PER_WINDOW, ge=0)
    read_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    key_count: int = Field(default=3, ge=1)
    client_timeout_ns: int = Field(default=Config.CLIENT_TIMEOUT_NS, gt=0)


@dataclass(frozen=True)
class ClientOp:
    """One completed (or timed out) client operation of the single client session"""

    request_id: int
    op: str
    key: Optional[str]
    value: Any
    ok: bool
    timed_out: bool
    node: NodeId
    submitted_ns: int
    completed_ns: int
    # highest value acknowledged for the key before this op was submitted
    floor: int


class ClientWorkload:
    def __init__(self, sim: Simulator, spec: WorkloadSpec, seed: int,
                 leader_claimants: Callable[[], List[NodeId]]):
        self.sim = sim
        self.spec = spec
        self.rng = np.random.default_rng((seed, 7))
        self._leader_claimants = leader_claimants
        self._next_id = 0
        self._next_value: Dict[str, int] = {}
        self._acked: Dict[str, int] = {}
        self._outstanding: Dict[int, Tuple[ClientRequest, NodeId, int]] = {}
        self._history: List[ClientOp] = []

    def schedule_window(self, start_ns: int, duration_ns: int):
        """Spread the window's requests uniformly over it"""
        count = self.spec.requests_per_window
        if count == 0:
            return
        offsets = np.sort(self.rng.integers(0, duration_ns, size=count))
        for offset in offsets:
            is_read = bool(self.rng.random() < self.spec.read_fraction)
            key = f"k{int(self.rng.integers(0, self.spec.key_count))}"
            self.sim.call_at(start_ns + int(offset), self._submit, "Read" if is_read else "Write", key, None)

    def request_removal(self, node: NodeId):
        """Membership-change fault: ask the cluster to remove a node"""
        self._submit("RemoveNode", None, node)

    def _route(self) -> Optional[NodeId]:
        running = [n for n in range(self.sim.config.node_count)
                   if self.sim.state.node_status[n] != NodeStatus.CRASHED]
        if not running:
            return None
        leaders = [n for n in self._leader_claimants() if n in running]
        pool = leaders or running
        return pool[int(self.rng.integers(0, len(pool)))]

    def _submit(self, op: str, key: Optional[str], value: Any):
        target = self._route()
        if target is None:
            logger.debug("no node available for %s", op)
            return
        if op == "Write":
            value = self._next_value.get(key, 0) + 1
            self._next_value[key] = value
        request = ClientRequest(self._next_id, op, key, value, target, self.sim.now)
        self._next_id += 1
        floor = self._acked.get(key, 0) if key is not None else 0
        self._outstanding[request.request_id] = (request, target, floor)
        self.sim.call_at(self.sim.now + self.spec.client_timeout_ns, self._timeout, request.request_id)
        if not self.sim.submit_client(target, request):
            logger.debug("node %d refused request %d", target, request.request_id)

    def on_response(self, node: NodeId, request: ClientRequest, ok: bool, value: Any) -> bool:
        """Simulator client handler; False means the response arrived too late and is dropped"""
        entry = self._outstanding.pop(request.request_id, None)
        if entry is None:
            return False
        _, target, floor = entry
        if request.op == "Write" and ok:
            self._acked[request.key] = max(self._acked.get(request.key, 0), request.value)
        result = value if request.op == "Read" else request.value
        self._history.append(ClientOp(
            request.request_id, request.op, request.key, result, ok, False,
            node, request.submitted_ns, self.sim.now, floor,
        ))
        return True

    def _timeout(self, request_id: int):
        entry = self._outstanding.pop(request_id, None)
        if entry is None:
            return
        request, target, floor = entry
        self._history.append(ClientOp(
            request.request_id, request.op, request.key, None, False, True,
            target, request.submitted_ns, self.sim.now, floor,
        ))
        self.sim.emit(target, EventKind.client_response(request.op))

    def drain_history(self) -> List[ClientOp]:
        history, self._history = self._history, []
        return history
