"""
Per-node observers: buffer locally observed events and forward them to the
mediator in sequence-numbered batches, together with a clock anchor per boot.
"""

import logging
from typing import Callable, Dict, List, Optional

from models.errors import BatchError, ClockAnnouncementError
from models.events import Batch, ClockRef, Event, NodeId

logger = logging.getLogger(__name__)


class NodeObserver:
    """Observer process attached to a single node; it lives and dies with the node"""

    def __init__(self, node: NodeId):
        self.node = node
        self.boot = -1
        self.alive = False
        self.pending: List[Event] = []
        self.next_seq_no = 0
        self._clock: Optional[ClockRef] = None
        self._announced = False
        self._last_seq_in_node = -1

    def start(self, boot: int, clock: ClockRef):
        """Begin a new boot epoch; batch numbering restarts at 0"""
        self.boot = boot
        self.alive = True
        self.pending = []
        self.next_seq_no = 0
        self._clock = clock
        self._announced = False

    def announce_clock(self) -> ClockRef:
        if not self.alive or self._clock is None:
            raise ClockAnnouncementError(f"node {self.node} is not booted")
        if self._announced:
            raise ClockAnnouncementError(f"node {self.node} already announced its clock in boot {self.boot}")
        self._announced = True
        return self._clock

    def record(self, ev: Event) -> bool:
        if not self.alive:
            return False
        if ev.seq_in_node <= self._last_seq_in_node:
            raise BatchError(
                f"node {self.node}: event seq {ev.seq_in_node} not after {self._last_seq_in_node}"
            )
        self._last_seq_in_node = ev.seq_in_node
        self.pending.append(ev)
        return True

    def flush(self, mono_ts: int, count: Optional[int] = None) -> Optional[Batch]:
        """Ship the oldest `count` pending events (all of them by default)"""
        if not self.alive:
            return None
        if count is None:
            count = len(self.pending)
        batch = Batch(
            node=self.node,
            seq_no=self.next_seq_no,
            events=tuple(self.pending[:count]),
            boot=self.boot,
            flush_mono_ts=mono_ts,
        )
        self.next_seq_no += 1
        self.pending = self.pending[count:]
        return batch

    def crash(self) -> List[Event]:
        """The observer dies with its node; unflushed events are lost"""
        lost = self.pending
        self.pending = []
        self.alive = False
        return lost


class ObserverTap:
    """
    The set of observers of a cluster, addressed by node id.

    `mono_clock(node)` returns the node's current monotonic time; it is used
    to stamp flushes so that empty batches still carry a horizon.
    """

    def __init__(self, node_ids, mono_clock: Callable[[NodeId], int]):
        self.observers: Dict[NodeId, NodeObserver] = {n: NodeObserver(n) for n in node_ids}
        self._mono_clock = mono_clock

    def start(self, node: NodeId, boot: int, clock: ClockRef):
        self.observers[node].start(boot, clock)

    def record(self, node: NodeId, ev: Event) -> bool:
        return self.observers[node].record(ev)

    def flush(self, node: NodeId, count: Optional[int] = None) -> Optional[Batch]:
        return self.observers[node].flush(self._mono_clock(node), count)

    def pending(self, node: NodeId) -> List[Event]:
        return list(self.observers[node].pending)

    def announce_clock(self, node: NodeId) -> ClockRef:
        return self.observers[node].announce_clock()

    def crash(self, node: NodeId) -> List[Event]:
        lost = self.observers[node].crash()
        if lost:
            logger.debug("node %d: %d unflushed events lost at crash", node, len(lost))
        return lost

    def pending_count(self, node: NodeId) -> int:
        return len(self.observers[node].pending)
