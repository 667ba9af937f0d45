"""
Core event vocabulary shared by the simulator, the observers and the mediator.

All values here are immutable; timestamps are integer nanoseconds of simulated
time so that runs are bit-reproducible.
"""

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, List, Optional, Tuple

from models.errors import ClockError

MASK64 = (1 << 64) - 1

NodeId = int


class EventTag(str, Enum):
    PACKET_SEND = "PacketSend"
    PACKET_RECV = "PacketRecv"
    CLIENT_REQUEST = "ClientRequest"
    CLIENT_RESPONSE = "ClientResponse"
    CODE_EVENT = "CodeEvent"


PACKET_TAGS = (EventTag.PACKET_SEND, EventTag.PACKET_RECV)
CLIENT_TAGS = (EventTag.CLIENT_REQUEST, EventTag.CLIENT_RESPONSE)


@dataclass(frozen=True, slots=True)
class EventKind:
    """What happened, independent of where and when"""

    tag: EventTag
    code_id: Optional[int] = None
    op_label: Optional[str] = None

    def __post_init__(self):
        if (self.tag == EventTag.CODE_EVENT) != (self.code_id is not None):
            raise ValueError(f"code_id must be present iff tag is CodeEvent: {self!r}")
        if self.code_id is not None and self.code_id < 0:
            raise ValueError("code_id must be non-negative")
        if (self.tag in CLIENT_TAGS) != (self.op_label is not None):
            raise ValueError(f"op_label must be present iff tag is a client tag: {self!r}")

    @classmethod
    def code(cls, code_id: int) -> "EventKind":
        return cls(EventTag.CODE_EVENT, code_id=code_id)

    @classmethod
    def client_request(cls, op_label: str) -> "EventKind":
        return cls(EventTag.CLIENT_REQUEST, op_label=op_label)

    @classmethod
    def client_response(cls, op_label: str) -> "EventKind":
        return cls(EventTag.CLIENT_RESPONSE, op_label=op_label)

    def key(self) -> str:
        """Canonical string form, stable across runs and used for hashing"""
        if self.code_id is not None:
            return f"{self.tag.value}:{self.code_id}"
        if self.op_label is not None:
            return f"{self.tag.value}:{self.op_label}"
        return self.tag.value

    def label(self, registry=None) -> str:
        """Human-readable name, resolving code ids through the registry if given"""
        if self.code_id is not None and registry is not None:
            return registry.label(self.code_id)
        if self.op_label is not None:
            suffix = "Req" if self.tag == EventTag.CLIENT_REQUEST else "Resp"
            return f"{self.op_label}{suffix}"
        return self.key()

    def __lt__(self, other: "EventKind") -> bool:
        return self.key() < other.key()


PACKET_SEND = EventKind(EventTag.PACKET_SEND)
PACKET_RECV = EventKind(EventTag.PACKET_RECV)


@dataclass(frozen=True, slots=True)
class Event:
    node: NodeId
    mono_ts: int
    kind: EventKind
    packet: Optional[int]
    seq_in_node: int

    def __post_init__(self):
        if (self.kind.tag in PACKET_TAGS) != (self.packet is not None):
            raise ValueError(f"packet must be present iff kind is a packet event: {self!r}")

    @property
    def key(self) -> Tuple[int, int]:
        """Vertex identity in timeline graphs"""
        return (self.node, self.seq_in_node)

    @property
    def is_send(self) -> bool:
        return self.kind.tag == EventTag.PACKET_SEND

    @property
    def is_recv(self) -> bool:
        return self.kind.tag == EventTag.PACKET_RECV


@dataclass(frozen=True, slots=True)
class ClockRef:
    node: NodeId
    mono_anchor: int
    real_anchor: int
    skew_bound_ns: int

    def __post_init__(self):
        if self.skew_bound_ns <= 0:
            raise ValueError("skew_bound_ns must be positive")


@dataclass(frozen=True, slots=True)
class Batch:
    """
    A node's events forwarded to the mediator in one flush.

    `boot` is the node's boot epoch and `flush_mono_ts` the monotonic time of
    the flush: every event of this boot up to that instant has been submitted,
    which is what lets empty heartbeat batches advance the mediator's horizon.
    """

    node: NodeId
    seq_no: int
    events: Tuple[Event, ...] = field(default_factory=tuple)
    boot: int = 0
    flush_mono_ts: int = 0


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def make_packet_id(src: NodeId, dst: NodeId, send_seq: int) -> int:
    """
    64-bit packet identifier of the send_seq-th packet from src to dst.

    The fields are packed without overlap (16/16/32 bits) and then mixed with
    the splitmix64 finalizer, which is a bijection, so distinct triples inside
    that space never collide.
    """
    if send_seq < 0:
        raise ValueError("send_seq must be non-negative")
    if not (0 <= src < 1 << 16 and 0 <= dst < 1 << 16 and send_seq < 1 << 32):
        raise ValueError("packet id fields out of range")
    packed = (src << 48) | (dst << 32) | send_seq
    return _splitmix64(packed)


def mono_to_real(clock: ClockRef, mono_ts: int) -> int:
    if mono_ts < clock.mono_anchor:
        raise ClockError(
            f"node {clock.node}: monotonic timestamp {mono_ts} precedes boot anchor {clock.mono_anchor}"
        )
    return clock.real_anchor + (mono_ts - clock.mono_anchor)


# Trace interchange: one JSON object per line, field order fixed
TRACE_FIELDS = ("node", "mono_ts", "kind", "code_id", "op_label", "packet", "seq_in_node")


def event_to_json(ev: Event) -> str:
    record = {
        "node": ev.node,
        "mono_ts": ev.mono_ts,
        "kind": ev.kind.tag.value,
        "code_id": ev.kind.code_id,
        "op_label": ev.kind.op_label,
        "packet": ev.packet,
        "seq_in_node": ev.seq_in_node,
    }
    return json.dumps(record, separators=(",", ":"))


def event_from_json(line: str) -> Event:
    record = json.loads(line)
    kind = EventKind(EventTag(record["kind"]), record.get("code_id"), record.get("op_label"))
    return Event(
        node=record["node"],
        mono_ts=record["mono_ts"],
        kind=kind,
        packet=record.get("packet"),
        seq_in_node=record["seq_in_node"],
    )


def write_trace(path, events: Iterable[Event], append: bool = False) -> int:
    count = 0
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(event_to_json(ev))
            fh.write("\n")
            count += 1
    return count


def read_trace(path) -> Iterator[Event]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield event_from_json(line)


def trace_digest(events: List[Event]) -> str:
    """Stable digest of an event sequence, used to detect replay divergence"""
    h = hashlib.sha256()
    for ev in events:
        h.update(event_to_json(ev).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()
