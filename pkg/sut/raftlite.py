"""
A compact Raft-like replicated log running inside the simulator.

Leader election, log replication, commit, snapshotting and single-server
membership change, instrumented with explicit code events. Three defects can
be switched on per node:

  membership_rollback  snapshots capture the latest (possibly uncommitted)
                       configuration and drop the committed configuration
                       entry; a later rollback cannot find it and asserts.
  even_split_vote      in even-sized configurations a tie counts as a
                       majority, so a split vote can elect two leaders in the
                       same term.
  stale_read           a leader serves reads from local state without
                       confirming it is still the leader.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Tuple

from config import Config
from models.events import NodeId
from netsim.simulator import ClientRequest, NodeContext, NodeProcess, ProcessAbort
from sut.registry import RAFT_REGISTRY

logger = logging.getLogger(__name__)

ELECTION_TIMER = "election"
HEARTBEAT_TIMER = "heartbeat"

BUG_MEMBERSHIP_ROLLBACK = "membership_rollback"
BUG_EVEN_SPLIT_VOTE = "even_split_vote"
BUG_STALE_READ = "stale_read"

C = RAFT_REGISTRY


class Role(str, Enum):
    FOLLOWER = "Follower"
    CANDIDATE = "Candidate"
    LEADER = "Leader"


class EntryKind(str, Enum):
    WRITE = "Write"
    CONFIG_CHANGE = "ConfigChange"
    NOOP = "Noop"


@dataclass(frozen=True)
class LogEntry:
    term: int
    index: int
    kind: EntryKind
    payload: Any = None


@dataclass(frozen=True)
class Snapshot:
    last_index: int
    last_term: int
    kv: Tuple[Tuple[str, Any], ...]
    config_entry: Optional[LogEntry]
    config_index: int


@dataclass(frozen=True)
class RequestVote:
    term: int
    candidate: NodeId
    last_log_index: int
    last_log_term: int


@dataclass(frozen=True)
class VoteReply:
    term: int
    granted: bool


@dataclass(frozen=True)
class AppendEntries:
    term: int
    leader: NodeId
    prev_index: int
    prev_term: int
    entries: Tuple[LogEntry, ...]
    leader_commit: int
    round: int


@dataclass(frozen=True)
class InstallSnapshot:
    term: int
    leader: NodeId
    snapshot: Snapshot
    round: int


@dataclass(frozen=True)
class AppendReply:
    term: int
    success: bool
    match_index: int
    round: int


def bootstrap_snapshot(members: Iterable[NodeId]) -> Snapshot:
    """Every node starts from the same committed bootstrap configuration at index 1"""
    entry = LogEntry(term=0, index=1, kind=EntryKind.CONFIG_CHANGE, payload=frozenset(members))
    return Snapshot(last_index=1, last_term=0, kv=(), config_entry=entry, config_index=1)


@dataclass
class PendingRead:
    request: ClientRequest
    read_index: int
    round: int


class RaftNode(NodeProcess):
    def __init__(self, node: NodeId, members: Iterable[NodeId], bugs: FrozenSet[str] = frozenset(),
                 snapshot_threshold: int = Config.SNAPSHOT_THRESHOLD,
                 heartbeat_ns: int = Config.HEARTBEAT_INTERVAL_NS,
                 election_min_ns: int = Config.ELECTION_TIMEOUT_MIN_NS,
                 election_max_ns: int = Config.ELECTION_TIMEOUT_MAX_NS):
        self.node = node
        self.bugs = frozenset(bugs)
        self.snapshot_threshold = snapshot_threshold
        self.heartbeat_ns = heartbeat_ns
        self.election_min_ns = election_min_ns
        self.election_max_ns = election_max_ns

        # persistent
        self.term = 0
        self.voted_for: Optional[NodeId] = None
        self.log: List[LogEntry] = []
        self.snapshot = bootstrap_snapshot(members)

        self._reset_volatile()

    # -- state helpers ----------------------------------------------------

    def _reset_volatile(self):
        self.role = Role.FOLLOWER
        self.leader_id: Optional[NodeId] = None
        self.commit_index = self.snapshot.last_index
        self.last_applied = self.snapshot.last_index
        self.kv: Dict[str, Any] = dict(self.snapshot.kv)
        self.votes = set()
        self.next_index: Dict[NodeId, int] = {}
        self.match_index: Dict[NodeId, int] = {}
        self.round = 0
        self.round_acks: Dict[int, set] = {}
        self.acked_round = 0
        self.pending_writes: Dict[int, Tuple[ClientRequest, int]] = {}
        self.pending_reads: List[PendingRead] = []
        self.config_index = self.snapshot.config_index
        self.uncommitted_config_index = 0
        self.config: FrozenSet[NodeId] = frozenset()
        self._recompute_config()

    @property
    def last_index(self) -> int:
        return self.log[-1].index if self.log else self.snapshot.last_index

    @property
    def last_term(self) -> int:
        return self.log[-1].term if self.log else self.snapshot.last_term

    def term_at(self, index: int) -> Optional[int]:
        if index == self.snapshot.last_index:
            return self.snapshot.last_term
        entry = self.entry_at(index)
        return entry.term if entry else None

    def entry_at(self, index: int) -> Optional[LogEntry]:
        """Log entry at index if it is still held in the log (not compacted)"""
        offset = index - self.snapshot.last_index - 1
        if 0 <= offset < len(self.log):
            return self.log[offset]
        return None

    def committed_config_entry(self) -> Optional[LogEntry]:
        entry = self.entry_at(self.config_index)
        if entry is not None:
            return entry
        snap_entry = self.snapshot.config_entry
        if snap_entry is not None and snap_entry.index == self.config_index:
            return snap_entry
        return None

    def _recompute_config(self):
        latest = None
        for entry in reversed(self.log):
            if entry.kind == EntryKind.CONFIG_CHANGE:
                latest = entry
                break
        if latest is not None and latest.index > self.commit_index:
            self.config = latest.payload
            self.uncommitted_config_index = latest.index
            return
        self.uncommitted_config_index = 0
        if latest is not None:
            self.config = latest.payload
            self.config_index = max(self.config_index, latest.index)
        elif self.snapshot.config_entry is not None:
            self.config = self.snapshot.config_entry.payload
            if self.snapshot.config_entry.index > self.snapshot.last_index:
                self.uncommitted_config_index = self.snapshot.config_entry.index

    def quorum(self) -> int:
        size = len(self.config)
        if BUG_EVEN_SPLIT_VOTE in self.bugs and size % 2 == 0:
            return size // 2
        return size // 2 + 1

    def in_config(self) -> bool:
        return self.node in self.config

    def peers(self) -> List[NodeId]:
        return sorted(n for n in self.config if n != self.node)

    def replication_targets(self) -> List[NodeId]:
        """Peers plus, while a removal is uncommitted, the nodes it removes so they learn of it"""
        targets = set(self.peers())
        if self.uncommitted_config_index:
            committed = self.committed_config_entry()
            if committed is not None:
                targets |= committed.payload - {self.node}
        return sorted(targets)

    # -- lifecycle --------------------------------------------------------

    def on_boot(self, ctx: NodeContext):
        self._reset_volatile()
        self._reset_election_timer(ctx)

    def on_crash(self):
        self._reset_volatile()

    def _reset_election_timer(self, ctx: NodeContext):
        delay = int(ctx.rng.integers(self.election_min_ns, self.election_max_ns + 1))
        ctx.set_timer(ELECTION_TIMER, delay)

    # -- timeouts ---------------------------------------------------------

    def on_timer(self, ctx: NodeContext, name: str):
        if name == HEARTBEAT_TIMER:
            if self.role == Role.LEADER:
                self._broadcast_append(ctx)
                ctx.set_timer(HEARTBEAT_TIMER, self.heartbeat_ns)
            return
        if name == ELECTION_TIMER:
            if self.role != Role.LEADER and self.in_config():
                self._start_election(ctx)
            self._reset_election_timer(ctx)

    def _start_election(self, ctx: NodeContext):
        self.role = Role.CANDIDATE
        self.term += 1
        self.voted_for = self.node
        self.votes = {self.node}
        self.leader_id = None
        ctx.emit(C.id("StartElection"))
        if len(self.votes & self.config) >= self.quorum():
            self._become_leader(ctx)
            return
        request = RequestVote(self.term, self.node, self.last_index, self.last_term)
        for peer in self.peers():
            ctx.send(peer, request)

    def _become_leader(self, ctx: NodeContext):
        self.role = Role.LEADER
        self.leader_id = self.node
        ctx.emit(C.id("BecomeLeader"))
        ctx.log(f"info: became leader term={self.term}")
        for peer in self.peers():
            self.next_index[peer] = self.last_index + 1
            self.match_index[peer] = 0
        self.round_acks = {}
        self.acked_round = 0
        self._append(ctx, EntryKind.NOOP, None)
        ctx.cancel_timer(ELECTION_TIMER)
        self._broadcast_append(ctx)
        ctx.set_timer(HEARTBEAT_TIMER, self.heartbeat_ns)

    def _step_down(self, ctx: NodeContext, term: int):
        was_leader = self.role == Role.LEADER
        if term > self.term:
            self.term = term
            self.voted_for = None
        self.role = Role.FOLLOWER
        self.votes = set()
        if was_leader:
            ctx.emit(C.id("StepDown"))
            ctx.log(f"info: stepped down term={self.term}")
            ctx.cancel_timer(HEARTBEAT_TIMER)
            self.pending_reads = []
        self._reset_election_timer(ctx)

    # -- replication ------------------------------------------------------

    def _append(self, ctx: NodeContext, kind: EntryKind, payload: Any) -> LogEntry:
        entry = LogEntry(self.term, self.last_index + 1, kind, payload)
        self.log.append(entry)
        if kind == EntryKind.CONFIG_CHANGE:
            self._config_appended(ctx, entry)
        return entry

    def _config_appended(self, ctx: NodeContext, entry: LogEntry):
        self.config = entry.payload
        self.uncommitted_config_index = entry.index
        ctx.emit(C.id("ConfigChangeAppended"))

    def _broadcast_append(self, ctx: NodeContext):
        self.round += 1
        self.round_acks[self.round] = {self.node}
        ctx.emit(C.id("AppendEntries"))
        for peer in self.replication_targets():
            next_index = self.next_index.setdefault(peer, self.last_index + 1)
            self.match_index.setdefault(peer, 0)
            if next_index <= self.snapshot.last_index:
                ctx.send(peer, InstallSnapshot(self.term, self.node, self.snapshot, self.round))
                continue
            prev_index = next_index - 1
            prev_term = self.term_at(prev_index)
            if prev_term is None:
                ctx.send(peer, InstallSnapshot(self.term, self.node, self.snapshot, self.round))
                continue
            entries = tuple(self.log[next_index - self.snapshot.last_index - 1:])
            ctx.send(peer, AppendEntries(self.term, self.node, prev_index, prev_term,
                                         entries, self.commit_index, self.round))
        self._advance_commit(ctx)

    def _advance_commit(self, ctx: NodeContext):
        if self.role != Role.LEADER:
            return
        new_commit = self.commit_index
        for index in range(self.last_index, self.commit_index, -1):
            entry = self.entry_at(index)
            if entry is None or entry.term != self.term:
                continue
            acks = sum(1 for n in self.config
                       if (n == self.node and self.last_index >= index) or self.match_index.get(n, 0) >= index)
            if acks >= self.quorum():
                new_commit = index
                break
        if new_commit > self.commit_index:
            self.commit_index = new_commit
            self._apply(ctx)

    def _apply(self, ctx: NodeContext):
        if self.last_applied >= self.commit_index:
            return
        ctx.emit(C.id("CommitEntry"))
        removed_self = False
        while self.last_applied < self.commit_index:
            self.last_applied += 1
            entry = self.entry_at(self.last_applied)
            if entry is None:
                continue
            if entry.kind == EntryKind.WRITE:
                key, value = entry.payload
                self.kv[key] = value
            elif entry.kind == EntryKind.CONFIG_CHANGE:
                self.config_index = entry.index
                if self.uncommitted_config_index <= entry.index:
                    self.uncommitted_config_index = 0
                ctx.emit(C.id("ApplyConfig"))
                removed_self = self.node not in entry.payload
            pending = self.pending_writes.pop(entry.index, None)
            if pending is not None:
                request, term = pending
                ctx.respond(request, term == entry.term, entry.payload if entry.kind == EntryKind.WRITE else None)
        self._serve_reads(ctx)
        self._maybe_snapshot(ctx)
        if removed_self and self.role == Role.LEADER:
            self._step_down(ctx, self.term)

    def on_message(self, ctx: NodeContext, src: NodeId, payload: Any):
        if isinstance(payload, AppendEntries):
            self._on_append_entries(ctx, src, payload)
        elif isinstance(payload, AppendReply):
            self._on_append_reply(ctx, src, payload)
        elif isinstance(payload, RequestVote):
            self._on_request_vote(ctx, src, payload)
        elif isinstance(payload, VoteReply):
            self._on_vote_reply(ctx, src, payload)
        elif isinstance(payload, InstallSnapshot):
            self._on_install_snapshot(ctx, src, payload)
        else:
            ctx.log(f"warn: unknown message from {src}: {type(payload).__name__}")

    def _accept_leader(self, ctx: NodeContext, term: int, leader: NodeId) -> bool:
        if term < self.term:
            ctx.emit(C.id("RejectStaleTerm"))
            return False
        if term > self.term or self.role != Role.FOLLOWER:
            self._step_down(ctx, term)
        self.leader_id = leader
        self._reset_election_timer(ctx)
        return True

    def _on_append_entries(self, ctx: NodeContext, src: NodeId, msg: AppendEntries):
        if not self._accept_leader(ctx, msg.term, msg.leader):
            ctx.send(src, AppendReply(self.term, False, 0, msg.round))
            return
        ctx.emit(C.id("HandleAppendEntries"))
        if msg.prev_index > self.last_index:
            ctx.send(src, AppendReply(self.term, False, self.last_index, msg.round))
            return
        if msg.prev_index > self.snapshot.last_index and self.term_at(msg.prev_index) != msg.prev_term:
            ctx.send(src, AppendReply(self.term, False, min(msg.prev_index - 1, self.commit_index), msg.round))
            return
        for entry in msg.entries:
            if entry.index <= self.snapshot.last_index:
                continue
            if entry.index <= self.last_index:
                if self.term_at(entry.index) == entry.term:
                    continue
                self._delete_conflicting(ctx, entry.index)
            self.log.append(entry)
            if entry.kind == EntryKind.CONFIG_CHANGE:
                self._config_appended(ctx, entry)
        last_new = msg.prev_index + len(msg.entries)
        if msg.leader_commit > self.commit_index:
            self.commit_index = min(msg.leader_commit, max(last_new, self.commit_index))
            self._apply(ctx)
        self._maybe_snapshot(ctx)
        ctx.send(src, AppendReply(self.term, True, last_new, msg.round))

    def _delete_conflicting(self, ctx: NodeContext, from_index: int):
        ctx.emit(C.id("DeleteConflictingEntries"))
        self.log = self.log[:from_index - self.snapshot.last_index - 1]
        for index in [i for i in self.pending_writes if i >= from_index]:
            request, _ = self.pending_writes.pop(index)
            ctx.respond(request, False)
        if self.uncommitted_config_index and self.uncommitted_config_index >= from_index:
            self._membership_rollback(ctx)

    def _membership_rollback(self, ctx: NodeContext):
        ctx.emit(C.id("MembershipRollback"))
        entry = self.committed_config_entry()
        if entry is None:
            raise ProcessAbort(
                f"membership rollback: committed configuration entry at index {self.config_index} not found"
            )
        self.config = entry.payload
        self.uncommitted_config_index = 0
        self._recompute_config()

    def _on_append_reply(self, ctx: NodeContext, src: NodeId, msg: AppendReply):
        if msg.term > self.term:
            self._step_down(ctx, msg.term)
            return
        if self.role != Role.LEADER or msg.term != self.term:
            return
        self.round_acks.setdefault(msg.round, set()).add(src)
        if msg.success:
            self.match_index[src] = max(self.match_index.get(src, 0), msg.match_index)
            self.next_index[src] = self.match_index[src] + 1
            self._advance_commit(ctx)
        else:
            self.next_index[src] = max(1, min(self.next_index.get(src, 1) - 1, msg.match_index + 1))
        self._update_acked_round()
        self._serve_reads(ctx)

    def _update_acked_round(self):
        for rnd in sorted(self.round_acks):
            if rnd > self.acked_round and len(self.round_acks[rnd] & self.config) >= self.quorum():
                self.acked_round = rnd
        for rnd in [r for r in self.round_acks if r <= self.acked_round]:
            del self.round_acks[rnd]

    # -- elections --------------------------------------------------------

    def _log_up_to_date(self, last_index: int, last_term: int) -> bool:
        if last_term != self.last_term:
            return last_term > self.last_term
        return last_index >= self.last_index

    def _on_request_vote(self, ctx: NodeContext, src: NodeId, msg: RequestVote):
        if msg.term > self.term:
            self._step_down(ctx, msg.term)
        granted = (
            msg.term == self.term
            and self.voted_for in (None, msg.candidate)
            and self._log_up_to_date(msg.last_log_index, msg.last_log_term)
        )
        if granted:
            self.voted_for = msg.candidate
            ctx.emit(C.id("GrantVote"))
            self._reset_election_timer(ctx)
        ctx.send(src, VoteReply(self.term, granted))

    def _on_vote_reply(self, ctx: NodeContext, src: NodeId, msg: VoteReply):
        if msg.term > self.term:
            self._step_down(ctx, msg.term)
            return
        if self.role != Role.CANDIDATE or msg.term != self.term or not msg.granted:
            return
        self.votes.add(src)
        if len(self.votes & self.config) >= self.quorum():
            self._become_leader(ctx)

    # -- snapshots --------------------------------------------------------

    def _on_install_snapshot(self, ctx: NodeContext, src: NodeId, msg: InstallSnapshot):
        if not self._accept_leader(ctx, msg.term, msg.leader):
            ctx.send(src, AppendReply(self.term, False, 0, msg.round))
            return
        snap = msg.snapshot
        if snap.last_index <= self.commit_index:
            ctx.send(src, AppendReply(self.term, True, self.commit_index, msg.round))
            return
        ctx.emit(C.id("InstallSnapshot"))
        if self.term_at(snap.last_index) == snap.last_term:
            self.log = self.log[snap.last_index - self.snapshot.last_index:]
        else:
            self.log = []
        self.snapshot = snap
        self.kv = dict(snap.kv)
        self.commit_index = self.last_applied = snap.last_index
        self.config_index = snap.config_index
        self._recompute_config()
        ctx.send(src, AppendReply(self.term, True, snap.last_index, msg.round))

    def _maybe_snapshot(self, ctx: NodeContext):
        if self.last_index - self.snapshot.last_index < self.snapshot_threshold:
            return
        if self.commit_index <= self.snapshot.last_index or self.last_applied < self.commit_index:
            return
        self.take_snapshot(ctx)

    def take_snapshot(self, ctx: NodeContext):
        """Compact the log up to the commit point"""
        ctx.emit(C.id("TakeSnapshot"))
        upto = self.commit_index
        committed_entry = self.committed_config_entry()
        if BUG_MEMBERSHIP_ROLLBACK in self.bugs and self.uncommitted_config_index:
            # the snapshot records the configuration in use, not the committed one
            config_entry = self.entry_at(self.uncommitted_config_index)
        else:
            config_entry = committed_entry
        last_term = self.term_at(upto)
        self.log = self.log[upto - self.snapshot.last_index:]
        self.snapshot = Snapshot(
            last_index=upto,
            last_term=last_term,
            kv=tuple(sorted(self.kv.items())),
            config_entry=config_entry,
            config_index=self.config_index,
        )
        ctx.log(f"info: snapshot at index={upto} config_index={self.config_index}")

    # -- clients ----------------------------------------------------------

    def on_client(self, ctx: NodeContext, request: ClientRequest):
        if self.role != Role.LEADER:
            return
        if request.op == "Write":
            entry = self._append(ctx, EntryKind.WRITE, (request.key, request.value))
            self.pending_writes[entry.index] = (request, entry.term)
        elif request.op == "Read":
            if BUG_STALE_READ in self.bugs:
                ctx.emit(C.id("ServeRead"))
                ctx.respond(request, True, self.kv.get(request.key))
                return
            self.pending_reads.append(PendingRead(request, self.commit_index, self.round + 1))
        elif request.op == "RemoveNode":
            target = request.value
            if self.uncommitted_config_index:
                ctx.respond(request, False)
                return
            if target not in self.config or len(self.config) <= 1:
                ctx.respond(request, target not in self.config)
                return
            entry = self._append(ctx, EntryKind.CONFIG_CHANGE, frozenset(self.config - {target}))
            self.pending_writes[entry.index] = (request, entry.term)
        else:
            ctx.respond(request, False)

    def _serve_reads(self, ctx: NodeContext):
        if self.role != Role.LEADER or not self.pending_reads:
            return
        committed_in_term = self.term_at(self.commit_index) == self.term
        still_waiting = []
        for pending in self.pending_reads:
            if committed_in_term and self.acked_round >= pending.round and self.last_applied >= pending.read_index:
                ctx.emit(C.id("ServeRead"))
                ctx.respond(pending.request, True, self.kv.get(pending.request.key))
            else:
                still_waiting.append(pending)
        self.pending_reads = still_waiting

    # -- inspection -------------------------------------------------------

    def describe(self) -> Dict[str, Any]:
        return {
            "node": self.node,
            "term": self.term,
            "role": self.role.value,
            "commit_index": self.commit_index,
            "last_index": self.last_index,
            "snapshot_index": self.snapshot.last_index,
            "config": sorted(self.config),
            "config_index": self.config_index,
        }
