"""
Timeline abstractions: values accumulated over a causal graph by `update`
along a node's own events and `merge` across message edges.

Every shipped abstraction is a join-semilattice under `merge`, so the result
of a fold does not depend on which topological order is used.
"""

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple, Type

import networkx as nx

from models.errors import AbstractionError, TimelineError
from models.events import Event, EventKind, NodeId
from mediator.timeline import CROSS, PROGRAM, TimelineGraph, VertexKey

logger = logging.getLogger(__name__)

Pair = Tuple[EventKind, EventKind]


class TimelineAbstraction(ABC):
    """Interface every abstraction implements"""

    @classmethod
    @abstractmethod
    def empty(cls) -> "TimelineAbstraction":
        pass

    @abstractmethod
    def update(self, ev: Event) -> "TimelineAbstraction":
        """Incorporate a same-node successor event"""
        pass

    @abstractmethod
    def merge(self, other: "TimelineAbstraction", this_ev: Optional[Event] = None,
              other_ev: Optional[Event] = None) -> "TimelineAbstraction":
        """Join causal information arriving over a cross-node edge"""
        pass


@dataclass(frozen=True)
class EventHistory(TimelineAbstraction):
    """Per-node sets of event kinds and of happens-before ordered kind pairs"""

    events: Dict[NodeId, FrozenSet[EventKind]] = field(default_factory=dict)
    pairs: Dict[NodeId, FrozenSet[Pair]] = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "EventHistory":
        return cls()

    def is_empty(self) -> bool:
        return not self.events

    def update(self, ev: Event) -> "EventHistory":
        n = ev.node
        kinds = self.events.get(n, frozenset())
        new_kinds = kinds | {ev.kind}
        new_pairs = {(a, ev.kind) for a in new_kinds}
        old_pairs = self.pairs.get(n, frozenset())
        if ev.kind in kinds and new_pairs <= old_pairs:
            return self
        events = dict(self.events)
        pairs = dict(self.pairs)
        events[n] = new_kinds
        pairs[n] = old_pairs | new_pairs
        return EventHistory(events, pairs)

    def merge(self, other: "EventHistory", this_ev: Optional[Event] = None,
              other_ev: Optional[Event] = None) -> "EventHistory":
        if other is self or other.is_empty():
            return self
        if self.is_empty():
            return other
        events = dict(self.events)
        pairs = dict(self.pairs)
        changed = False
        for n, kinds in other.events.items():
            mine = events.get(n, frozenset())
            if not kinds <= mine:
                events[n] = mine | kinds
                changed = True
        for n, ps in other.pairs.items():
            mine = pairs.get(n, frozenset())
            if not ps <= mine:
                pairs[n] = mine | ps
                changed = True
        return EventHistory(events, pairs) if changed else self

    def items(self) -> List[str]:
        """Canonical flattened item set, one string per (node, kind) and (node, pair)"""
        out = []
        for n in sorted(self.events):
            out.extend(f"{n}|{k.key()}" for k in self.events[n])
        for n in sorted(self.pairs):
            out.extend(f"{n}|{a.key()}>{b.key()}" for a, b in self.pairs[n])
        return sorted(out)

    def to_json(self, registry=None) -> str:
        def name(kind: EventKind) -> str:
            return kind.label(registry) if registry is not None else kind.key()

        doc = {
            "events": {str(n): sorted(name(k) for k in self.events[n]) for n in sorted(self.events)},
            "pairs": {str(n): sorted([name(a), name(b)] for a, b in self.pairs[n]) for n in sorted(self.pairs)},
        }
        return json.dumps(doc, sort_keys=False, separators=(",", ":"))

    def has_pair(self, node: NodeId, before: EventKind, after: EventKind) -> bool:
        return (before, after) in self.pairs.get(node, frozenset())


@dataclass(frozen=True)
class VectorClock(TimelineAbstraction):
    counters: Dict[NodeId, int] = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "VectorClock":
        return cls()

    def update(self, ev: Event) -> "VectorClock":
        counters = dict(self.counters)
        counters[ev.node] = counters.get(ev.node, 0) + 1
        return VectorClock(counters)

    def merge(self, other: "VectorClock", this_ev: Optional[Event] = None,
              other_ev: Optional[Event] = None) -> "VectorClock":
        counters = dict(self.counters)
        for n, c in other.counters.items():
            if c > counters.get(n, 0):
                counters[n] = c
        return VectorClock(counters)

    def get(self, node: NodeId) -> int:
        return self.counters.get(node, 0)

    def leq(self, other: "VectorClock") -> bool:
        return all(c <= other.get(n) for n, c in self.counters.items())


def history_update(h: EventHistory, ev: Event) -> EventHistory:
    return h.update(ev)


def history_merge(h: EventHistory, other: EventHistory) -> EventHistory:
    return h.merge(other)


def _predecessors(g: TimelineGraph, key: VertexKey) -> Tuple[Optional[VertexKey], Optional[VertexKey]]:
    program, cross = None, None
    for u in g.graph.predecessors(key):
        kind = g.graph.edges[u, key]["kind"]
        if kind == PROGRAM:
            program = u
        elif kind == CROSS:
            cross = u
    return program, cross


def fold_values(g: TimelineGraph, abstraction: Type[TimelineAbstraction] = EventHistory,
                order: Optional[List[VertexKey]] = None) -> Dict[VertexKey, TimelineAbstraction]:
    """Abstraction value at every vertex, computed along `order` (a topological order by default)"""
    if order is None:
        try:
            order = list(g.topological_order())
        except nx.NetworkXUnfeasible as exc:
            raise TimelineError("timeline graph contains a cycle") from exc
    empty = abstraction.empty()
    values: Dict[VertexKey, TimelineAbstraction] = {}
    for key in order:
        ev = g.event(key)
        program, cross = _predecessors(g, key)
        value = values[program] if program is not None else empty
        if cross is not None:
            if cross not in values:
                raise AbstractionError(f"vertex {key} visited before its send {cross}")
            value = value.merge(values[cross], ev, g.event(cross))
        values[key] = value.update(ev)
    return values


def sink_value(values: Dict[VertexKey, TimelineAbstraction], g: TimelineGraph,
               abstraction: Type[TimelineAbstraction] = EventHistory) -> TimelineAbstraction:
    """Value at an artificial event causally after every node's last event"""
    last: Dict[NodeId, VertexKey] = {}
    for key in values:
        node, seq = key
        if node not in last or seq > last[node][1]:
            last[node] = key
    sink = abstraction.empty()
    for node in sorted(last):
        sink = sink.merge(values[last[node]])
    return sink


def abstract_timeline(g: TimelineGraph, abstraction: Type[TimelineAbstraction] = EventHistory,
                      order: Optional[List[VertexKey]] = None) -> TimelineAbstraction:
    return sink_value(fold_values(g, abstraction, order), g, abstraction)


class IncrementalAbstraction:
    """
    Running fold over successive timeline snapshots.

    Only the per-node frontier values and the values at still-unmatched sends
    are kept, so vertices retired from the timeline are never revisited.
    """

    def __init__(self, abstraction: Type[TimelineAbstraction] = EventHistory):
        self.abstraction = abstraction
        self.frontier: Dict[NodeId, TimelineAbstraction] = {}
        self.last_key: Dict[NodeId, VertexKey] = {}
        self.send_values: Dict[VertexKey, TimelineAbstraction] = {}
        self._sink = abstraction.empty()

    @property
    def sink(self) -> TimelineAbstraction:
        return self._sink

    def extend(self, g: TimelineGraph) -> TimelineAbstraction:
        if not g.delta:
            return self._sink
        try:
            order = g.delta_in_order()
        except nx.NetworkXUnfeasible as exc:
            raise TimelineError("timeline graph contains a cycle") from exc
        empty = self.abstraction.empty()
        local: Dict[VertexKey, TimelineAbstraction] = {}
        for key in order:
            ev = g.event(key)
            program, cross = _predecessors(g, key)
            expected = self.last_key.get(ev.node)
            if program != expected:
                raise AbstractionError(
                    f"vertex {key} does not extend node {ev.node}'s abstracted prefix (expected after {expected})"
                )
            value = self.frontier.get(ev.node, empty)
            if cross is not None:
                send_value = local.get(cross)
                if send_value is None:
                    send_value = self.send_values.pop(cross, None)
                else:
                    self.send_values.pop(cross, None)
                if send_value is None:
                    raise AbstractionError(f"receive {key} refers to unknown send {cross}")
                value = value.merge(send_value, ev, g.event(cross))
            value = value.update(ev)
            local[key] = value
            self.frontier[ev.node] = value
            self.last_key[ev.node] = key
            if ev.is_send:
                self.send_values[key] = value
        sink = empty
        for node in sorted(self.frontier):
            sink = sink.merge(self.frontier[node])
        self._sink = sink
        return sink

    def rebase(self):
        """Restart accumulation from the current cut: later summaries cover only what follows"""
        empty = self.abstraction.empty()
        self.frontier = {n: empty for n in self.frontier}
        self.send_values = {k: empty for k in self.send_values}
        self._sink = empty
