"""
Prefix-closed Lamport timeline construction.

Batches arrive per node (possibly out of order), are reordered by sequence
number and flattened into one event list per node. Each build takes the events
every node has safely submitted (the prefix ranges), closes them under
happens-before by pulling in the sends their receives depend on, and appends
the result to a cumulative causal graph. Sends whose receive has not been seen
yet point at a distinguished infinity vertex until the receive arrives.
"""

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Tuple

import networkx as nx

from models.errors import BatchError, ClockAnnouncementError, TimelineError
from models.events import Batch, ClockRef, Event, NodeId, mono_to_real

logger = logging.getLogger(__name__)

VertexKey = Tuple[int, int]
INF: VertexKey = (-1, -1)

PROGRAM = "program"
CROSS = "cross"
PENDING = "pending"


@dataclass
class _Epoch:
    clock: ClockRef
    next_seq: int = 0
    held: Dict[int, Batch] = field(default_factory=dict)


class NodeTimeline:
    """Everything ingested from one node, across its boot epochs"""

    def __init__(self, node: NodeId):
        self.node = node
        self.epochs: Dict[int, _Epoch] = {}
        self.current_epoch = -1
        self.events: List[Event] = []
        self.real_ts: List[int] = []
        self.processed = 0
        self.horizon: float = -math.inf
        self.dead = False
        self.last_epoch = -1

    @property
    def frontier(self) -> int:
        """Highest contiguous batch sequence number ingested in the current epoch (-1 if none)"""
        epoch = self.epochs.get(self.current_epoch)
        return epoch.next_seq - 1 if epoch else -1

    def announce(self, boot: int, clock: ClockRef):
        if boot in self.epochs:
            raise ClockAnnouncementError(f"node {self.node}: epoch {boot} announced twice")
        if boot < self.current_epoch:
            raise ClockAnnouncementError(f"node {self.node}: epoch {boot} announced after {self.current_epoch}")
        self.epochs[boot] = _Epoch(clock)
        self.current_epoch = boot
        self.dead = False
        self.horizon = max(self.horizon, mono_to_real(clock, clock.mono_anchor))

    def ingest(self, batch: Batch) -> List[int]:
        """Hold or apply a batch; returns the flat indices of newly appended events"""
        epoch = self.epochs.get(batch.boot)
        if epoch is None:
            raise BatchError(f"node {self.node}: batch for unannounced epoch {batch.boot}")
        if batch.seq_no < epoch.next_seq or batch.seq_no in epoch.held:
            raise BatchError(f"node {self.node}: duplicate batch {batch.seq_no} in epoch {batch.boot}")
        if batch.boot < self.last_epoch:
            raise BatchError(f"node {self.node}: batch from superseded epoch {batch.boot}")
        epoch.held[batch.seq_no] = batch
        appended = []
        while epoch.next_seq in epoch.held:
            appended.extend(self._apply(epoch, epoch.held.pop(epoch.next_seq), batch.boot))
            epoch.next_seq += 1
        return appended

    def _apply(self, epoch: _Epoch, batch: Batch, boot: int) -> List[int]:
        appended = []
        for ev in batch.events:
            if ev.node != self.node:
                raise BatchError(f"node {self.node}: batch carries event of node {ev.node}")
            if self.events and ev.seq_in_node <= self.events[-1].seq_in_node:
                raise BatchError(f"node {self.node}: event seq {ev.seq_in_node} out of order")
            self.events.append(ev)
            self.real_ts.append(mono_to_real(epoch.clock, ev.mono_ts))
            appended.append(len(self.events) - 1)
        self.last_epoch = boot
        self.horizon = max(self.horizon, mono_to_real(epoch.clock, batch.flush_mono_ts))
        return appended

    @property
    def effective_horizon(self) -> float:
        return math.inf if self.dead else self.horizon


@dataclass(frozen=True)
class Ranges:
    """Half-open index intervals into each node's flattened event list"""

    ts: float
    prefix: Dict[NodeId, Tuple[int, int]]
    extension: Dict[NodeId, Tuple[int, int]]


@dataclass(frozen=True)
class TimelineGraph:
    """
    Immutable snapshot of the cumulative causal graph.

    `delta` lists the vertices added by the build that produced the snapshot
    and `repointed` the (send, recv) pairs whose infinity edge was replaced by
    a concrete receive in that build.
    """

    graph: nx.DiGraph
    delta: Tuple[VertexKey, ...] = ()
    repointed: Tuple[Tuple[VertexKey, VertexKey], ...] = ()

    def event(self, key: VertexKey) -> Event:
        return self.graph.nodes[key]["event"]

    def vertices(self) -> List[VertexKey]:
        return [v for v in self.graph.nodes if v != INF]

    def events(self) -> List[Event]:
        return [self.event(v) for v in self.vertices()]

    def __len__(self) -> int:
        return len(self.vertices())

    def cross_edges(self) -> List[Tuple[VertexKey, VertexKey]]:
        return [(u, v) for u, v, kind in self.graph.edges(data="kind") if kind == CROSS]

    def program_edges(self) -> List[Tuple[VertexKey, VertexKey]]:
        return [(u, v) for u, v, kind in self.graph.edges(data="kind") if kind == PROGRAM]

    def pending_sends(self) -> FrozenSet[VertexKey]:
        if INF not in self.graph:
            return frozenset()
        return frozenset(self.graph.predecessors(INF))

    def ancestors(self, key: VertexKey) -> FrozenSet[VertexKey]:
        return frozenset(nx.ancestors(self.graph, key)) - {INF}

    def causal_graph(self) -> nx.DiGraph:
        """The graph without the infinity vertex"""
        return self.graph.subgraph(self.vertices())

    def topological_order(self, keys=None) -> Iterator[VertexKey]:
        sub = self.graph.subgraph(self.vertices() if keys is None else keys)
        return nx.lexicographical_topological_sort(sub)

    def delta_in_order(self) -> List[VertexKey]:
        return list(self.topological_order(self.delta))

    def is_prefix_closed(self) -> bool:
        """Every receive in the graph is linked to its send"""
        for v in self.vertices():
            ev = self.event(v)
            if ev.is_recv and not any(self.graph.edges[u, v]["kind"] == CROSS for u in self.graph.predecessors(v)):
                return False
        return True


class Timeline:
    """Mediator-side timeline builder, fed with clock announcements and batches"""

    def __init__(self, node_ids, skew_bound_ns: int):
        if skew_bound_ns <= 0:
            raise TimelineError("skew bound must be positive")
        self.skew_bound_ns = skew_bound_ns
        self.nodes: Dict[NodeId, NodeTimeline] = {n: NodeTimeline(n) for n in sorted(node_ids)}
        self.graph = nx.DiGraph()
        self.graph.add_node(INF)
        self._send_index: Dict[int, Tuple[NodeId, int]] = {}
        self._pending: Dict[int, VertexKey] = {}
        self._last_key: Dict[NodeId, VertexKey] = {}

    def announce(self, boot: int, clock: ClockRef):
        self._node(clock.node).announce(boot, clock)

    def mark_dead(self, node: NodeId):
        """A crashed node submits nothing more until it boots again"""
        self._node(node).dead = True

    def _node(self, node: NodeId) -> NodeTimeline:
        if node not in self.nodes:
            raise TimelineError(f"unknown node {node}")
        return self.nodes[node]

    def ingest(self, batch: Batch):
        nt = self._node(batch.node)
        for idx in nt.ingest(batch):
            ev = nt.events[idx]
            if ev.is_send:
                self._send_index[ev.packet] = (ev.node, idx)

    def ready_ranges(self) -> Ranges:
        for nt in self.nodes.values():
            if not nt.epochs:
                raise TimelineError(f"node {nt.node} has not announced a clock")
        ts = min(nt.effective_horizon for nt in self.nodes.values())
        prefix, extension = {}, {}
        for n, nt in self.nodes.items():
            start = nt.processed
            pend = max(start, bisect.bisect_right(nt.real_ts, ts - self.skew_bound_ns))
            eend = max(pend, bisect.bisect_right(nt.real_ts, ts + self.skew_bound_ns))
            prefix[n] = (start, pend)
            extension[n] = (start, eend)
        return Ranges(ts, prefix, extension)

    def _track_link_sources(self, ranges: Ranges) -> Dict[int, Tuple[NodeId, int]]:
        links = {}
        for n, (start, end) in ranges.extension.items():
            events = self.nodes[n].events
            for idx in range(start, end):
                if events[idx].is_send:
                    links[events[idx].packet] = (n, idx)
        return links

    def _link_source(self, ev: Event, links) -> Tuple[NodeId, int]:
        src = links.get(ev.packet)
        if src is not None:
            return src
        src = self._send_index.get(ev.packet)
        if src is None:
            raise TimelineError(
                f"receive {ev.key} of packet {ev.packet:#x} has no matching send in ingested history"
            )
        node, idx = src
        if idx >= self.nodes[node].processed:
            logger.warning("send of packet %#x on node %d lies beyond the extension range", ev.packet, node)
        return src

    def build_prefix_closed(self) -> TimelineGraph:
        ranges = self.ready_ranges()
        links = self._track_link_sources(ranges)
        rw = {n: start for n, (start, _) in ranges.prefix.items()}
        ln = {n: end for n, (_, end) in ranges.prefix.items()}
        while any(rw[n] < ln[n] for n in self.nodes):
            for n, nt in self.nodes.items():
                while rw[n] < ln[n]:
                    ev = nt.events[rw[n]]
                    if ev.is_recv:
                        src_node, src_idx = self._link_source(ev, links)
                        if src_idx >= self.nodes[src_node].processed:
                            ln[src_node] = max(src_idx + 1, ln[src_node])
                    rw[n] += 1
        return self._attach(ln)

    def _attach(self, ln: Dict[NodeId, int]) -> TimelineGraph:
        delta: List[VertexKey] = []
        for n, nt in self.nodes.items():
            for idx in range(nt.processed, ln[n]):
                ev = nt.events[idx]
                self.graph.add_node(ev.key, event=ev, real_ts=nt.real_ts[idx])
                delta.append(ev.key)
        repointed = []
        for n, nt in self.nodes.items():
            for idx in range(nt.processed, ln[n]):
                ev = nt.events[idx]
                last = self._last_key.get(n)
                if last is not None:
                    self.graph.add_edge(last, ev.key, kind=PROGRAM)
                self._last_key[n] = ev.key
                if ev.is_send and ev.packet not in self._pending:
                    self._pending[ev.packet] = ev.key
                    self.graph.add_edge(ev.key, INF, kind=PENDING)
            nt.processed = ln[n]
        for key in delta:
            ev = self.graph.nodes[key]["event"]
            if ev.is_recv:
                send_key = self._pending.pop(ev.packet, None)
                if send_key is None:
                    raise TimelineError(f"receive {key} attached before its send")
                self.graph.remove_edge(send_key, INF)
                self.graph.add_edge(send_key, key, kind=CROSS)
                self._check_real_time(send_key, key)
                repointed.append((send_key, key))
        # sends emitted in this very build are not reported as repointed
        fresh = set(delta)
        repointed = tuple(p for p in repointed if p[0] not in fresh)
        return TimelineGraph(nx.freeze(self.graph.copy()), tuple(delta), repointed)

    def _check_real_time(self, send_key: VertexKey, recv_key: VertexKey):
        send_real = self.graph.nodes[send_key]["real_ts"]
        recv_real = self.graph.nodes[recv_key]["real_ts"]
        if send_real > recv_real + 2 * self.skew_bound_ns:
            logger.warning("cross edge %s -> %s breaches the real-time window", send_key, recv_key)

    def retire(self):
        """Drop vertices already abstracted, keeping each node's last vertex and pending sends"""
        keep = set(self._last_key.values()) | set(self._pending.values()) | {INF}
        self.graph.remove_nodes_from([v for v in list(self.graph.nodes) if v not in keep])
