from .timeline import Timeline, TimelineGraph
from .abstraction import EventHistory, IncrementalAbstraction, VectorClock, abstract_timeline
from .novelty import StateRegistry, calibrate, signature, similarity

__all__ = [
    'Timeline', 'TimelineGraph', 'EventHistory', 'IncrementalAbstraction', 'VectorClock',
    'abstract_timeline', 'StateRegistry', 'calibrate', 'signature', 'similarity',
]
