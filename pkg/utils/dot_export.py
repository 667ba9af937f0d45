from typing import Optional

from mediator.timeline import INF, TimelineGraph
from models.events import Event, EventTag
from sut.registry import InstrumentationRegistry


def _label(ev: Event, registry: Optional[InstrumentationRegistry]) -> str:
    if ev.kind.tag == EventTag.PACKET_SEND:
        return "send"
    if ev.kind.tag == EventTag.PACKET_RECV:
        return "recv"
    return ev.kind.label(registry)


def _vertex(key) -> str:
    return "ev_%d_%d" % key


def timeline_to_dot(g: TimelineGraph, registry: Optional[InstrumentationRegistry] = None,
                    name: str = "timeline") -> str:
    """One horizontal line of events per node, message edges drawn between the lines"""
    by_node = {}
    for key in sorted(g.vertices()):
        by_node.setdefault(key[0], []).append(key)

    dot = "digraph %s {\n  rankdir=LR\n  splines=polyline\n  node [shape=box, fontsize=10]\n" % name
    for node, keys in sorted(by_node.items()):
        dot += "  subgraph cluster_node_%d {\n    label=\"node %d\";\n" % (node, node)
        for key in keys:
            ev = g.event(key)
            shape = ", shape=\"point\"" if ev.kind.tag in (EventTag.PACKET_SEND, EventTag.PACKET_RECV) else ""
            dot += "    %s [label=\"%s\", group=\"n%d\"%s];\n" % (_vertex(key), _label(ev, registry), node, shape)
        dot += "  }\n"

    dot += "  edge[weight=2, arrowhead=none, color=gray75];\n"
    for u, v in g.program_edges():
        if u in g.graph and v in g.graph:
            dot += "  %s -> %s;\n" % (_vertex(u), _vertex(v))

    dot += "  edge[weight=1, arrowhead=normal, color=black];\n"
    for u, v in g.cross_edges():
        dot += "  %s -> %s [constraint=false];\n" % (_vertex(u), _vertex(v))

    pending = sorted(g.pending_sends())
    if pending:
        dot += "  inf [label=\"∞\", shape=\"plaintext\"];\n"
        for u in pending:
            if u != INF:
                dot += "  %s -> inf [constraint=false, style=dashed];\n" % _vertex(u)
    dot += "}\n"
    return dot


def write_dot(path, g: TimelineGraph, registry: Optional[InstrumentationRegistry] = None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(timeline_to_dot(g, registry))
