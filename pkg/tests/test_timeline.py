import unittest

import numpy as np

from models.errors import BatchError, ClockAnnouncementError, TimelineError
from models.events import PACKET_RECV, PACKET_SEND, Batch, ClockRef, Event, EventKind, make_packet_id
from mediator.abstraction import VectorClock, fold_values
from mediator.timeline import INF, Timeline
from tracegen import MS, random_trace

SKEW = 100 * MS


def clock(node, real_anchor=0):
    return ClockRef(node, 0, real_anchor, SKEW)


def code(node, seq, ts, code_id=0):
    return Event(node, ts, EventKind.code(code_id), None, seq)


def announced(nodes=(0, 1)):
    tl = Timeline(nodes, SKEW)
    for n in nodes:
        tl.announce(0, clock(n))
    return tl


class TestIngest(unittest.TestCase):
    """Reordering, deduplication and horizons of per-node batches"""

    def test_out_of_order_batches_are_reordered(self):
        tl = announced((0,))
        b0 = Batch(0, 0, (code(0, 0, 1 * MS),), flush_mono_ts=1 * MS)
        b1 = Batch(0, 1, (code(0, 1, 2 * MS),), flush_mono_ts=2 * MS)
        b2 = Batch(0, 2, (code(0, 2, 3 * MS),), flush_mono_ts=3 * MS)
        for b in (b0, b2, b1):
            tl.ingest(b)
        nt = tl.nodes[0]
        self.assertEqual(nt.frontier, 2)
        self.assertEqual([e.seq_in_node for e in nt.events], [0, 1, 2])

    def test_held_batch_does_not_advance_horizon(self):
        tl = announced((0,))
        tl.ingest(Batch(0, 1, (code(0, 1, 5 * MS),), flush_mono_ts=5 * MS))
        self.assertEqual(tl.nodes[0].frontier, -1)
        self.assertEqual(tl.nodes[0].horizon, 0)

    def test_duplicate_batch_is_rejected(self):
        tl = announced((0,))
        batch = Batch(0, 0, (code(0, 0, 1 * MS),), flush_mono_ts=1 * MS)
        tl.ingest(batch)
        with self.assertRaises(BatchError):
            tl.ingest(batch)
        self.assertEqual(len(tl.nodes[0].events), 1)

    def test_heartbeat_advances_frontier_and_horizon(self):
        tl = announced((0,))
        tl.ingest(Batch(0, 0, (), flush_mono_ts=40 * MS))
        self.assertEqual(tl.nodes[0].frontier, 0)
        self.assertEqual(tl.nodes[0].horizon, 40 * MS)

    def test_batch_for_unannounced_epoch(self):
        tl = announced((0,))
        with self.assertRaises(BatchError):
            tl.ingest(Batch(0, 0, (), boot=1))

    def test_double_announcement(self):
        tl = announced((0,))
        with self.assertRaises(ClockAnnouncementError):
            tl.announce(0, clock(0))

    def test_new_epoch_restarts_batch_numbering(self):
        tl = announced((0,))
        tl.ingest(Batch(0, 0, (code(0, 0, 1 * MS),), boot=0, flush_mono_ts=1 * MS))
        tl.announce(1, ClockRef(0, 0, 500 * MS, SKEW))
        tl.ingest(Batch(0, 0, (code(0, 1, 1 * MS),), boot=1, flush_mono_ts=1 * MS))
        self.assertEqual(tl.nodes[0].real_ts, [1 * MS, 501 * MS])


class TestReadyRanges(unittest.TestCase):
    def test_unannounced_node(self):
        tl = Timeline((0, 1), SKEW)
        tl.announce(0, clock(0))
        with self.assertRaises(TimelineError):
            tl.ready_ranges()

    def test_silent_node_dominates(self):
        tl = announced((0, 1))
        tl.ingest(Batch(0, 0, tuple(code(0, i, (i + 1) * 50 * MS) for i in range(5)), flush_mono_ts=250 * MS))
        ranges = tl.ready_ranges()
        self.assertEqual(ranges.ts, 0)
        self.assertEqual(ranges.prefix, {0: (0, 0), 1: (0, 0)})

    def test_quiescent_nodes(self):
        tl = announced((0, 1))
        ts = [100 * MS, 300 * MS, 450 * MS, 550 * MS]
        tl.ingest(Batch(0, 0, tuple(code(0, i, t) for i, t in enumerate(ts)), flush_mono_ts=500 * MS))
        tl.ingest(Batch(1, 0, (), flush_mono_ts=500 * MS))
        ranges = tl.ready_ranges()
        self.assertEqual(ranges.ts, 500 * MS)
        # prefix up to 400ms, extension up to 600ms
        self.assertEqual(ranges.prefix[0], (0, 2))
        self.assertEqual(ranges.extension[0], (0, 4))

    def test_dead_node_does_not_stall(self):
        tl = announced((0, 1))
        tl.ingest(Batch(0, 0, (code(0, 0, 10 * MS),), flush_mono_ts=400 * MS))
        tl.mark_dead(1)
        self.assertEqual(tl.ready_ranges().ts, 400 * MS)


class TestBuild(unittest.TestCase):
    def test_single_node_chain(self):
        tl = announced((0,))
        tl.ingest(Batch(0, 0, tuple(code(0, i, (i + 1) * MS) for i in range(3)), flush_mono_ts=500 * MS))
        g = tl.build_prefix_closed()
        self.assertEqual(len(g), 3)
        self.assertEqual(len(g.program_edges()), 2)
        self.assertEqual(g.cross_edges(), [])

    def test_send_recv_within_window(self):
        tl = announced((0, 1))
        packet = make_packet_id(0, 1, 0)
        tl.ingest(Batch(0, 0, (Event(0, 10 * MS, PACKET_SEND, packet, 0),), flush_mono_ts=500 * MS))
        tl.ingest(Batch(1, 0, (Event(1, 15 * MS, PACKET_RECV, packet, 0),), flush_mono_ts=500 * MS))
        g = tl.build_prefix_closed()
        self.assertEqual(g.cross_edges(), [((0, 0), (1, 0))])
        self.assertIn((0, 0), g.ancestors((1, 0)))
        self.assertTrue(g.is_prefix_closed())

    def test_pending_send_is_repointed(self):
        tl = announced((0, 1))
        packet = make_packet_id(0, 1, 0)
        tl.ingest(Batch(0, 0, (Event(0, 10 * MS, PACKET_SEND, packet, 0),), flush_mono_ts=300 * MS))
        tl.ingest(Batch(1, 0, (), flush_mono_ts=300 * MS))
        first = tl.build_prefix_closed()
        self.assertEqual(first.pending_sends(), frozenset({(0, 0)}))

        tl.ingest(Batch(0, 1, (), flush_mono_ts=800 * MS))
        tl.ingest(Batch(1, 1, (Event(1, 400 * MS, PACKET_RECV, packet, 0),), flush_mono_ts=800 * MS))
        second = tl.build_prefix_closed()
        self.assertEqual(second.pending_sends(), frozenset())
        self.assertEqual(second.repointed, (((0, 0), (1, 0)),))
        self.assertEqual(second.delta, ((1, 0),))
        # the earlier snapshot is unaffected
        self.assertIn(INF, first.graph.successors((0, 0)))

    def test_recv_pulls_in_send_beyond_prefix(self):
        tl = Timeline((0, 1), SKEW)
        tl.announce(0, clock(0, real_anchor=40 * MS))
        tl.announce(0, clock(1, real_anchor=-40 * MS))
        packet = make_packet_id(0, 1, 0)
        # skewed clocks: the send (real 130ms) is past the prefix cut at 60ms, its recv (real 60ms) is not
        tl.ingest(Batch(0, 0, (code(0, 0, 10 * MS), Event(0, 90 * MS, PACKET_SEND, packet, 1)),
                        flush_mono_ts=200 * MS))
        tl.ingest(Batch(1, 0, (Event(1, 100 * MS, PACKET_RECV, packet, 0),), flush_mono_ts=200 * MS))
        ranges = tl.ready_ranges()
        self.assertEqual(ranges.prefix[0], (0, 1))
        self.assertEqual(ranges.prefix[1], (0, 1))
        g = tl.build_prefix_closed()
        self.assertIn((0, 1), g.vertices())
        self.assertEqual(g.cross_edges(), [((0, 1), (1, 0))])
        self.assertTrue(g.is_prefix_closed())

    def test_recv_without_send(self):
        tl = announced((0, 1))
        packet = make_packet_id(0, 1, 7)
        tl.ingest(Batch(0, 0, (), flush_mono_ts=500 * MS))
        tl.ingest(Batch(1, 0, (Event(1, 10 * MS, PACKET_RECV, packet, 0),), flush_mono_ts=500 * MS))
        with self.assertRaises(TimelineError):
            tl.build_prefix_closed()

    def test_growth_is_monotone(self):
        rng = np.random.default_rng(5)
        trace = random_trace(rng, max_events=150)
        tl = Timeline(range(trace.node_count), trace.skew_bound_ns)
        for n, c in trace.clocks.items():
            tl.announce(0, c)
        previous = set()
        previous_edges = set()
        for batch in trace.batches(rng) + trace.final_heartbeats():
            tl.ingest(batch)
            g = tl.build_prefix_closed()
            vertices = set(g.vertices())
            edges = {(u, v) for u, v in g.graph.edges if v != INF}
            self.assertTrue(previous <= vertices)
            self.assertTrue(previous_edges <= edges)
            previous, previous_edges = vertices, edges
        self.assertEqual(len(previous), len(trace.events))

    def test_retire_keeps_frontier_and_pending(self):
        tl = announced((0, 1))
        packet = make_packet_id(0, 1, 0)
        tl.ingest(Batch(0, 0, (code(0, 0, 1 * MS), Event(0, 2 * MS, PACKET_SEND, packet, 1)),
                        flush_mono_ts=500 * MS))
        tl.ingest(Batch(1, 0, (code(1, 0, 1 * MS), code(1, 1, 2 * MS)), flush_mono_ts=500 * MS))
        tl.build_prefix_closed()
        tl.retire()
        self.assertEqual(set(tl.graph.nodes), {INF, (0, 1), (1, 1)})


class TestAgainstVectorClocks(unittest.TestCase):
    """Randomized 5-node traces checked against an independent vector-clock oracle"""

    def _build_all(self, seed):
        rng = np.random.default_rng(seed)
        trace = random_trace(rng)
        tl = Timeline(range(trace.node_count), trace.skew_bound_ns)
        for n, c in trace.clocks.items():
            tl.announce(0, c)
        graphs = []
        for batch in trace.batches(rng):
            tl.ingest(batch)
            if rng.random() < 0.3:
                graphs.append(tl.build_prefix_closed())
        for batch in trace.final_heartbeats():
            tl.ingest(batch)
        graphs.append(tl.build_prefix_closed())
        return trace, graphs

    def test_ancestors_match_happens_before(self):
        for seed in range(500):
            trace, graphs = self._build_all(seed)
            final = graphs[-1]
            self.assertEqual(len(final), len(trace.events), f"seed {seed}")
            for key in final.vertices():
                self.assertEqual(set(final.ancestors(key)), trace.causal_past(key), f"seed {seed} vertex {key}")

    def test_every_emitted_graph_is_a_consistent_cut(self):
        for seed in range(500):
            trace, graphs = self._build_all(seed)
            for g in graphs:
                self.assertTrue(g.is_prefix_closed(), f"seed {seed}")
                vertices = set(g.vertices())
                for key in vertices:
                    self.assertTrue(trace.direct_predecessors(key) <= vertices, f"seed {seed} vertex {key}")

    def test_vector_clock_abstraction_matches_textbook(self):
        for seed in range(500):
            trace, graphs = self._build_all(seed)
            values = fold_values(graphs[-1], VectorClock)
            for key, value in values.items():
                expected = trace.vc[key]
                self.assertEqual(tuple(value.get(n) for n in range(trace.node_count)), expected,
                                 f"seed {seed} vertex {key}")

    def test_cross_edges_respect_real_time_window(self):
        for seed in range(50):
            trace, graphs = self._build_all(seed)
            g = graphs[-1]
            for u, v in g.cross_edges():
                self.assertLessEqual(g.graph.nodes[u]["real_ts"],
                                     g.graph.nodes[v]["real_ts"] + 2 * trace.skew_bound_ns)


if __name__ == '__main__':
    unittest.main()
