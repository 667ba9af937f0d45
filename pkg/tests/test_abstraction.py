import json
import unittest

import networkx as nx
import numpy as np
from hypothesis import given, settings, strategies as st

from models.errors import AbstractionError
from models.events import PACKET_RECV, PACKET_SEND, Batch, ClockRef, Event, EventKind, make_packet_id
from mediator.abstraction import (
    EventHistory, IncrementalAbstraction, VectorClock, abstract_timeline, history_merge, history_update,
)
from mediator.timeline import Timeline, TimelineGraph
from sut.registry import RAFT_REGISTRY
from tracegen import MS, random_trace

A = EventKind.code(0)
B = EventKind.code(1)

kinds = st.sampled_from([EventKind.code(i) for i in range(4)] + [
    EventKind(tag) for tag in (PACKET_SEND.tag, PACKET_RECV.tag)])
histories = st.lists(st.tuples(st.integers(0, 3), kinds), max_size=12).map(
    lambda evs: _history_of(evs))


def _history_of(evs):
    h = EventHistory.empty()
    for seq, (node, kind) in enumerate(evs):
        packet = 1 if kind.tag in (PACKET_SEND.tag, PACKET_RECV.tag) else None
        h = h.update(Event(node, seq, kind, packet, seq))
    return h


def ev(node, seq, kind=A):
    return Event(node, seq * MS, kind, None, seq)


def build_graph(trace, rng) -> TimelineGraph:
    tl = Timeline(range(trace.node_count), trace.skew_bound_ns)
    for c in trace.clocks.values():
        tl.announce(0, c)
    for batch in trace.batches(rng) + trace.final_heartbeats():
        tl.ingest(batch)
    return tl.build_prefix_closed()


def random_topological_order(g: TimelineGraph, rng) -> list:
    """Kahn's algorithm picking uniformly among ready vertices"""
    sub = g.causal_graph()
    indegree = {v: sub.in_degree(v) for v in sub}
    ready = sorted(v for v, d in indegree.items() if d == 0)
    order = []
    while ready:
        v = ready.pop(int(rng.integers(0, len(ready))))
        order.append(v)
        for w in sub.successors(v):
            indegree[w] -= 1
            if indegree[w] == 0:
                ready.append(w)
    return order


class TestEventHistory(unittest.TestCase):
    def test_update_sequence(self):
        h = history_update(EventHistory.empty(), ev(1, 0, A))
        self.assertEqual(h.events, {1: frozenset({A})})
        self.assertEqual(h.pairs, {1: frozenset({(A, A)})})

        h = history_update(h, ev(1, 1, B))
        self.assertEqual(h.events[1], frozenset({A, B}))
        self.assertEqual(h.pairs[1], frozenset({(A, A), (A, B), (B, B)}))

        h2 = history_update(h, ev(2, 0, A))
        self.assertEqual(h2.events[1], h.events[1])
        self.assertEqual(h2.pairs[1], h.pairs[1])
        self.assertEqual(h2.events[2], frozenset({A}))
        self.assertEqual(h2.pairs[2], frozenset({(A, A)}))

    def test_pairs_only_hold_known_kinds(self):
        h = _history_of([(0, A), (0, B), (1, B), (0, A)])
        for node, pairs in h.pairs.items():
            for a, b in pairs:
                self.assertIn(a, h.events[node])
                self.assertIn(b, h.events[node])

    def test_merge_identity(self):
        h = _history_of([(0, A), (1, B)])
        self.assertEqual(history_merge(h, EventHistory.empty()), h)
        self.assertEqual(history_merge(EventHistory.empty(), h), h)

    @given(histories)
    def test_merge_idempotent(self, h):
        self.assertEqual(history_merge(h, h), h)

    @given(histories, histories)
    def test_merge_commutative(self, a, b):
        self.assertEqual(history_merge(a, b).items(), history_merge(b, a).items())

    @settings(max_examples=200)
    @given(histories, histories, histories)
    def test_merge_associative(self, a, b, c):
        left = history_merge(a, history_merge(b, c))
        right = history_merge(history_merge(a, b), c)
        self.assertEqual(left.items(), right.items())

    def test_canonical_json_is_sorted(self):
        h = _history_of([(2, B), (0, A), (0, B)])
        doc = h.to_json(RAFT_REGISTRY)
        parsed = json.loads(doc)
        self.assertEqual(list(parsed["events"]), ["0", "2"])
        self.assertEqual(parsed["events"]["0"], sorted([RAFT_REGISTRY.label(0), RAFT_REGISTRY.label(1)]))
        self.assertEqual(doc, _history_of([(0, A), (0, B), (2, B)]).to_json(RAFT_REGISTRY))


class TestAbstractTimeline(unittest.TestCase):
    def test_empty_graph(self):
        g = TimelineGraph(nx.DiGraph())
        self.assertTrue(abstract_timeline(g).is_empty())
        self.assertEqual(abstract_timeline(g, VectorClock).counters, {})

    def test_snapshot_then_rollback_pair(self):
        """Old leader replicates a config change, the follower snapshots, a new leader forces a rollback"""
        skew = 100 * MS
        tl = Timeline(range(3), skew)
        for n in range(3):
            tl.announce(0, ClockRef(n, 0, 0, skew))
        c = RAFT_REGISTRY.id
        p_old = make_packet_id(0, 1, 0)
        p_new = make_packet_id(2, 1, 0)
        tl.ingest(Batch(0, 0, (
            Event(0, 1 * MS, EventKind.code(c("ConfigChangeAppended")), None, 0),
            Event(0, 2 * MS, PACKET_SEND, p_old, 1),
        ), flush_mono_ts=500 * MS))
        tl.ingest(Batch(1, 0, (
            Event(1, 5 * MS, PACKET_RECV, p_old, 0),
            Event(1, 6 * MS, EventKind.code(c("ConfigChangeAppended")), None, 1),
            Event(1, 7 * MS, EventKind.code(c("TakeSnapshot")), None, 2),
            Event(1, 30 * MS, PACKET_RECV, p_new, 3),
            Event(1, 31 * MS, EventKind.code(c("DeleteConflictingEntries")), None, 4),
            Event(1, 32 * MS, EventKind.code(c("MembershipRollback")), None, 5),
        ), flush_mono_ts=500 * MS))
        tl.ingest(Batch(2, 0, (
            Event(2, 20 * MS, EventKind.code(c("BecomeLeader")), None, 0),
            Event(2, 21 * MS, PACKET_SEND, p_new, 1),
        ), flush_mono_ts=500 * MS))
        h = abstract_timeline(tl.build_prefix_closed())
        snap = EventKind.code(c("TakeSnapshot"))
        rollback = EventKind.code(c("MembershipRollback"))
        self.assertTrue(h.has_pair(1, snap, rollback))
        self.assertFalse(h.has_pair(1, rollback, snap))
        # causal information of both leaders reaches the sink
        self.assertIn(EventKind.code(c("BecomeLeader")), h.events[2])
        self.assertIn(EventKind.code(c("ConfigChangeAppended")), h.events[0])

    def test_vector_clock_sink_counts_events(self):
        rng = np.random.default_rng(11)
        trace = random_trace(rng, max_events=120)
        g = build_graph(trace, rng)
        sink = abstract_timeline(g, VectorClock)
        for n in range(trace.node_count):
            self.assertEqual(sink.get(n), len(trace.node_events(n)))

    def test_vector_clock_order(self):
        a = VectorClock.empty().update(Event(0, 1, A, None, 0))
        b = VectorClock.empty().update(Event(1, 1, B, None, 0))
        joined = a.merge(b).update(Event(1, 2, A, None, 1))
        self.assertTrue(a.leq(joined))
        self.assertTrue(b.leq(joined))
        self.assertFalse(joined.leq(a))
        self.assertFalse(a.leq(b) or b.leq(a))

    def test_topological_order_independence(self):
        for seed in range(200):
            rng = np.random.default_rng(1000 + seed)
            g = build_graph(random_trace(rng, max_events=80), rng)
            expected = abstract_timeline(g).items()
            for _ in range(10):
                order = random_topological_order(g, rng)
                self.assertEqual(abstract_timeline(g, order=order).items(), expected, f"seed {seed}")


class TestIncremental(unittest.TestCase):
    def _snapshots(self, trace, rng, split_points):
        tl = Timeline(range(trace.node_count), trace.skew_bound_ns)
        for c in trace.clocks.values():
            tl.announce(0, c)
        batches = trace.batches(rng) + trace.final_heartbeats()
        graphs = []
        start = 0
        for cut in sorted(split_points) + [len(batches)]:
            for batch in batches[start:cut]:
                tl.ingest(batch)
            start = cut
            graphs.append(tl.build_prefix_closed())
            tl.retire()
        return graphs

    def test_zero_event_extension(self):
        rng = np.random.default_rng(3)
        trace = random_trace(rng, max_events=60)
        inc = IncrementalAbstraction()
        g = build_graph(trace, rng)
        first = inc.extend(g)
        empty_delta = TimelineGraph(g.graph, ())
        self.assertIs(inc.extend(empty_delta), first)

    def test_random_splits_equal_single_pass(self):
        for seed in range(200):
            rng = np.random.default_rng(2000 + seed)
            trace = random_trace(rng, max_events=100)
            single = abstract_timeline(build_graph(trace, np.random.default_rng(seed)))

            n_batches = len(trace.batches(np.random.default_rng(seed))) + trace.node_count
            splits = rng.integers(0, n_batches + 1, size=int(rng.integers(1, 5))).tolist()
            inc = IncrementalAbstraction()
            for g in self._snapshots(trace, np.random.default_rng(seed), splits):
                inc.extend(g)
            self.assertEqual(inc.sink.items(), single.items(), f"seed {seed}")

    def test_non_extension_is_rejected(self):
        g1 = TimelineGraph(nx.DiGraph(), ())
        graph = nx.DiGraph()
        graph.add_node((0, 0), event=ev(0, 0))
        graph.add_node((0, 1), event=ev(0, 1))
        graph.add_edge((0, 0), (0, 1), kind="program")
        inc = IncrementalAbstraction()
        inc.extend(g1)
        with self.assertRaises(AbstractionError):
            inc.extend(TimelineGraph(graph, ((0, 1),)))

    def test_rebase_restarts_summary(self):
        rng = np.random.default_rng(8)
        trace = random_trace(rng, max_events=80)
        graphs = self._snapshots(trace, rng, [len(trace.events) // 4])
        inc = IncrementalAbstraction()
        inc.extend(graphs[0])
        inc.rebase()
        self.assertTrue(inc.sink.is_empty())
        after = inc.extend(graphs[1])
        for key in graphs[1].delta:
            event = graphs[1].event(key)
            self.assertIn(event.kind, after.events[event.node])


if __name__ == '__main__':
    unittest.main()
