"""
Deterministic discrete-event simulator.

A single-threaded loop over a priority queue keyed by (time, tiebreak counter)
drives node processes, message deliveries with seeded latency, per-node clocks
with a constant seeded skew, observer flushes and the fault primitives the
nemesis enacts. Given the same SimConfig, fault sequence and workload seed the
produced event trace is bit-identical.
"""

import heapq
import itertools
import json
import logging
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Deque, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import Config
from models.errors import FaultError
from models.events import (
    PACKET_RECV, PACKET_SEND, Batch, ClockRef, Event, EventKind, NodeId, make_packet_id,
)
from netsim.faults import FaultAction, FaultTag, NetworkState, NodeStatus
from netsim.observer import ObserverTap

logger = logging.getLogger(__name__)


class SimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    node_count: int = Field(default=Config.NODE_COUNT, ge=3)
    rng_seed: int = Field(default=0, ge=0, lt=2 ** 64)
    min_latency_ns: int = Field(default=Config.MIN_LATENCY_NS, ge=0)
    max_latency_ns: int = Field(default=Config.MAX_LATENCY_NS, ge=0)
    skew_bound_ns: int = Field(default=Config.SKEW_BOUND_NS, gt=0)
    batch_interval_ns: int = Field(default=Config.BATCH_INTERVAL_NS, gt=0)
    pause_queue_bound: int = Field(default=Config.PAUSE_QUEUE_BOUND, ge=0)

    @model_validator(mode="after")
    def _check_latency(self):
        if self.min_latency_ns > self.max_latency_ns:
            raise ValueError("min_latency_ns must not exceed max_latency_ns")
        return self


class ProcessAbort(Exception):
    """Raised by a node process when an internal assertion fails; halts that node only"""


@dataclass(frozen=True)
class AssertionRecord:
    node: NodeId
    time_ns: int
    detail: str


@dataclass
class ClientRequest:
    request_id: int
    op: str
    key: Optional[str] = None
    value: Any = None
    target: Optional[NodeId] = None
    submitted_ns: int = 0


class NodeProcess(ABC):
    """A system-under-test node driven by the simulator"""

    @abstractmethod
    def on_boot(self, ctx: "NodeContext"):
        pass

    @abstractmethod
    def on_timer(self, ctx: "NodeContext", name: str):
        pass

    @abstractmethod
    def on_message(self, ctx: "NodeContext", src: NodeId, payload: Any):
        pass

    @abstractmethod
    def on_client(self, ctx: "NodeContext", request: ClientRequest):
        pass

    @abstractmethod
    def on_crash(self):
        """Discard volatile state; persistent state survives for the next boot"""
        pass


class NodeContext:
    """What a node process may do: send, arm timers, emit code events, log and answer clients"""

    def __init__(self, sim: "Simulator", node: NodeId):
        self._sim = sim
        self.node = node

    @property
    def rng(self) -> np.random.Generator:
        return self._sim.node_rngs[self.node]

    @property
    def now_mono(self) -> int:
        return self._sim.mono_now(self.node)

    def send(self, dst: NodeId, payload: Any) -> int:
        return self._sim.schedule_message(self.node, dst, payload)

    def set_timer(self, name: str, delay_ns: int):
        self._sim.set_timer(self.node, name, delay_ns)

    def cancel_timer(self, name: str):
        self._sim.cancel_timer(self.node, name)

    def emit(self, code_id: int):
        self._sim.emit(self.node, EventKind.code(code_id))

    def log(self, line: str):
        self._sim.node_log(self.node, line)

    def respond(self, request: ClientRequest, ok: bool, value: Any = None):
        self._sim.respond(self.node, request, ok, value)


class Simulator:
    def __init__(self, config: SimConfig, processes: Dict[NodeId, NodeProcess]):
        self.config = config
        n = config.node_count
        if sorted(processes) != list(range(n)):
            raise ValueError("processes must cover node ids 0..node_count-1")
        self.processes = processes
        self.rng = np.random.default_rng(config.rng_seed)
        self.node_rngs = {i: np.random.default_rng((config.rng_seed, 1000 + i)) for i in range(n)}
        half = config.skew_bound_ns // 2
        # pairwise offset difference stays within the skew bound
        self.offsets = [int(x) for x in self.rng.integers(-half, half + 1, size=n)]

        self.now = 0
        self._queue: List[Tuple[int, int, Callable, tuple]] = []
        self._counter = itertools.count()

        self.state = NetworkState(n)
        self.boot_real = [0] * n
        self.boot_epoch = [0] * n
        self._seq_in_node = [0] * n
        self._send_seq = [0] * n
        self._timer_gen: Dict[Tuple[NodeId, str], int] = {}
        self._deferred_timers: Dict[NodeId, set] = {i: set() for i in range(n)}
        self._paused_inbox: Dict[NodeId, Deque[tuple]] = {i: deque() for i in range(n)}
        self._cancelled_packets: set = set()
        self._received_packets: set = set()
        self.contexts = {i: NodeContext(self, i) for i in range(n)}

        self.tap = ObserverTap(range(n), self.mono_now)
        self.client_handler = None
        self.membership_hook: Optional[Callable[[NodeId], None]] = None

        # outboxes drained by the harness
        self._events: List[Event] = []
        self._batches: List[Batch] = []
        self._announcements: List[Tuple[int, ClockRef]] = []
        self._logs: List[Tuple[NodeId, int, str]] = []
        self._assertions: List[AssertionRecord] = []
        self.network_log: List[Dict] = []
        self._started = False

    # -- clocks -----------------------------------------------------------

    def mono_now(self, node: NodeId) -> int:
        return self.now - self.boot_real[node]

    def real_now(self, node: NodeId) -> int:
        return self.now + self.offsets[node]

    def _push(self, time_ns: int, callback: Callable, *args):
        heapq.heappush(self._queue, (time_ns, next(self._counter), callback, args))

    def call_at(self, time_ns: int, callback: Callable, *args):
        """Schedule an external callback (e.g. client workload) on the event loop"""
        self._push(max(time_ns, self.now), callback, *args)

    # -- lifecycle --------------------------------------------------------

    def start(self):
        if self._started:
            return
        self._started = True
        for node in range(self.config.node_count):
            self._boot(node)
        self._push(self.config.batch_interval_ns, self._flush_all)

    def _boot(self, node: NodeId):
        self.boot_real[node] = self.now
        clock = ClockRef(
            node=node,
            mono_anchor=0,
            real_anchor=self.now + self.offsets[node],
            skew_bound_ns=self.config.skew_bound_ns,
        )
        self.tap.start(node, self.boot_epoch[node], clock)
        self._announcements.append((self.boot_epoch[node], self.tap.announce_clock(node)))
        self.state.node_status[node] = NodeStatus.RUNNING
        self._invoke(node, self.processes[node].on_boot, self.contexts[node])

    def _invoke(self, node: NodeId, handler: Callable, *args):
        try:
            handler(*args)
        except ProcessAbort as exc:
            detail = str(exc)
            self.node_log(node, f"fatal: assertion failed: {detail}")
            self._assertions.append(AssertionRecord(node, self.now, detail))
            logger.info("node %d aborted: %s", node, detail)
            self._crash(node)

    # -- events -----------------------------------------------------------

    def emit(self, node: NodeId, kind: EventKind, packet: Optional[int] = None) -> Optional[Event]:
        if self.state.node_status[node] != NodeStatus.RUNNING:
            return None
        ev = Event(node, self.mono_now(node), kind, packet, self._seq_in_node[node])
        self._seq_in_node[node] += 1
        if self.tap.record(node, ev):
            self._events.append(ev)
        return ev

    def node_log(self, node: NodeId, line: str):
        self._logs.append((node, self.now, line))

    # -- messaging --------------------------------------------------------

    def schedule_message(self, src: NodeId, dst: NodeId, payload: Any) -> int:
        packet = make_packet_id(src, dst, self._send_seq[src])
        self._send_seq[src] += 1
        self.emit(src, PACKET_SEND, packet)
        latency = int(self.rng.integers(self.config.min_latency_ns, self.config.max_latency_ns + 1))
        self._push(self.now + latency, self._deliver, src, dst, packet, payload)
        return packet

    def _deliver(self, src: NodeId, dst: NodeId, packet: int, payload: Any):
        if packet in self._cancelled_packets:
            self._cancelled_packets.discard(packet)
            return
        status = self.state.node_status[dst]
        if status == NodeStatus.CRASHED or not self.state.reachable(src, dst):
            return
        if status == NodeStatus.PAUSED:
            inbox = self._paused_inbox[dst]
            if len(inbox) < self.config.pause_queue_bound:
                inbox.append(("msg", src, packet, payload))
            return
        self._receive(dst, src, packet, payload)

    def _receive(self, dst: NodeId, src: NodeId, packet: int, payload: Any):
        if self.emit(dst, PACKET_RECV, packet) is not None:
            self._received_packets.add(packet)
        self._invoke(dst, self.processes[dst].on_message, self.contexts[dst], src, payload)

    # -- timers -----------------------------------------------------------

    def set_timer(self, node: NodeId, name: str, delay_ns: int):
        gen = self._timer_gen.get((node, name), 0) + 1
        self._timer_gen[(node, name)] = gen
        self._deferred_timers[node].discard(name)
        self._push(self.now + delay_ns, self._fire_timer, node, name, gen, self.boot_epoch[node])

    def cancel_timer(self, node: NodeId, name: str):
        self._timer_gen[(node, name)] = self._timer_gen.get((node, name), 0) + 1
        self._deferred_timers[node].discard(name)

    def _fire_timer(self, node: NodeId, name: str, gen: int, epoch: int):
        if epoch != self.boot_epoch[node] or gen != self._timer_gen.get((node, name)):
            return
        status = self.state.node_status[node]
        if status == NodeStatus.CRASHED:
            return
        if status == NodeStatus.PAUSED:
            self._deferred_timers[node].add(name)
            return
        self._invoke(node, self.processes[node].on_timer, self.contexts[node], name)

    # -- clients ----------------------------------------------------------

    def submit_client(self, node: NodeId, request: ClientRequest) -> bool:
        """Hand a client request to a node; returns False if the node cannot take it"""
        status = self.state.node_status[node]
        if status == NodeStatus.CRASHED:
            return False
        if status == NodeStatus.PAUSED:
            inbox = self._paused_inbox[node]
            if len(inbox) >= self.config.pause_queue_bound:
                return False
            inbox.append(("client", request))
            return True
        self._client_arrives(node, request)
        return True

    def _client_arrives(self, node: NodeId, request: ClientRequest):
        self.emit(node, EventKind.client_request(request.op))
        self._invoke(node, self.processes[node].on_client, self.contexts[node], request)

    def respond(self, node: NodeId, request: ClientRequest, ok: bool, value: Any = None):
        if self.client_handler is not None and not self.client_handler(node, request, ok, value):
            return
        self.emit(node, EventKind.client_response(request.op))

    # -- observers --------------------------------------------------------

    def _flush_all(self):
        for node in range(self.config.node_count):
            batch = self.tap.flush(node)
            if batch is not None:
                self._batches.append(batch)
        self._push(self.now + self.config.batch_interval_ns, self._flush_all)

    # -- faults -----------------------------------------------------------

    def enact(self, fault: FaultAction) -> NetworkState:
        n = self.config.node_count
        if fault.target is not None:
            self.state.check_node(fault.target)
        tag = fault.tag
        if tag == FaultTag.PARTITION_RANDOM_HALVES:
            perm = [int(x) for x in self.rng.permutation(n)]
            half = n // 2
            self.state.sever(perm[:half], perm[half:])
        elif tag == FaultTag.HEAL_NETWORK:
            self.state.heal()
        elif tag == FaultTag.ISOLATE_NODE:
            self.state.isolate(fault.target)
        elif tag == FaultTag.CRASH_NODE:
            self._crash(fault.target)
        elif tag == FaultTag.RESTART_NODE:
            self._restart(fault.target)
        elif tag == FaultTag.PAUSE_NODE:
            if self.state.node_status[fault.target] == NodeStatus.RUNNING:
                self.state.node_status[fault.target] = NodeStatus.PAUSED
        elif tag == FaultTag.RESUME_NODE:
            self._resume(fault.target)
        elif tag == FaultTag.REQUEST_MEMBERSHIP_CHANGE:
            if self.membership_hook is not None:
                self.membership_hook(fault.target)
        elif tag == FaultTag.NO_OP:
            pass
        else:
            raise FaultError(f"unsupported fault {tag}")
        entry = {"time": self.now, "fault": tag.value, "target": fault.target}
        entry.update(self.state.to_dict())
        self.network_log.append(entry)
        logger.debug("enacted %s -> %s", fault.label, entry["partitions"])
        return self.state

    def _crash(self, node: NodeId):
        if self.state.node_status[node] == NodeStatus.CRASHED:
            return
        # a send some peer already received must reach the mediator with the node's last batch
        pending = self.tap.pending(node)
        keep = max((i + 1 for i, ev in enumerate(pending)
                    if ev.is_send and ev.packet in self._received_packets), default=0)
        if keep:
            self._batches.append(self.tap.flush(node, keep))
        lost = self.tap.crash(node)
        # the remaining sends never left the node
        lost_sends = {ev.packet for ev in lost if ev.is_send}
        if lost_sends:
            self._cancelled_packets |= lost_sends
            for inbox in self._paused_inbox.values():
                held = [item for item in inbox if item[0] == "msg" and item[2] in lost_sends]
                for item in held:
                    inbox.remove(item)
                    self._cancelled_packets.discard(item[2])
        self.state.node_status[node] = NodeStatus.CRASHED
        self._paused_inbox[node].clear()
        self._deferred_timers[node].clear()
        self.processes[node].on_crash()

    def _restart(self, node: NodeId):
        if self.state.node_status[node] != NodeStatus.CRASHED:
            logger.debug("restart of node %d ignored: not crashed", node)
            return
        self.boot_epoch[node] += 1
        self._boot(node)

    def _resume(self, node: NodeId):
        if self.state.node_status[node] != NodeStatus.PAUSED:
            logger.debug("resume of node %d ignored: not paused", node)
            return
        self.state.node_status[node] = NodeStatus.RUNNING
        inbox = self._paused_inbox[node]
        while inbox and self.state.node_status[node] == NodeStatus.RUNNING:
            item = inbox.popleft()
            if item[0] == "msg":
                _, src, packet, payload = item
                self._receive(node, src, packet, payload)
            else:
                self._client_arrives(node, item[1])
        for name in sorted(self._deferred_timers[node]):
            if self.state.node_status[node] != NodeStatus.RUNNING:
                break
            self._invoke(node, self.processes[node].on_timer, self.contexts[node], name)
        self._deferred_timers[node].clear()

    # -- running ----------------------------------------------------------

    def run_window(self, duration_ns: int) -> List[Event]:
        if duration_ns <= 0:
            raise ValueError("duration_ns must be positive")
        self.start()
        end = self.now + duration_ns
        while self._queue and self._queue[0][0] <= end:
            time_ns, _, callback, args = heapq.heappop(self._queue)
            self.now = time_ns
            callback(*args)
        self.now = end
        return self.drain_events()

    def drain_events(self) -> List[Event]:
        events, self._events = self._events, []
        return events

    def drain_batches(self) -> List[Batch]:
        batches, self._batches = self._batches, []
        return batches

    def drain_announcements(self) -> List[Tuple[int, ClockRef]]:
        announcements, self._announcements = self._announcements, []
        return announcements

    def drain_logs(self) -> List[Tuple[NodeId, int, str]]:
        logs, self._logs = self._logs, []
        return logs

    def drain_assertions(self) -> List[AssertionRecord]:
        records, self._assertions = self._assertions, []
        return records

    def write_network_log(self, path, append: bool = True):
        with open(path, "a" if append else "w", encoding="utf-8") as fh:
            for entry in self.network_log:
                fh.write(json.dumps(entry, separators=(",", ":")))
                fh.write("\n")
