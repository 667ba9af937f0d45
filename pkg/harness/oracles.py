"""Bug oracles run over every window: log keywords, seeded assertions, leader safety, liveness and stale reads."""

import logging
import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from config import Config
from models.events import NodeId
from netsim.simulator import AssertionRecord
from sut.workload import ClientOp

logger = logging.getLogger(__name__)

LEADER_LINE = re.compile(r"became leader term=(\d+)")


class FindingKind(str, Enum):
    LOG_KEYWORD = "LogKeyword"
    ASSERTION_FIRED = "AssertionFired"
    CONSISTENCY_VIOLATION = "ConsistencyViolation"
    NO_LEADER_TOO_LONG = "NoLeaderTooLong"


@dataclass(frozen=True)
class OracleFinding:
    kind: FindingKind
    node: Optional[NodeId]
    step: int
    detail: str
    schedule: int = 0
    # replay reference: campaign seed plus the schedule's fault prefix up to the finding
    seed: int = 0
    fault_prefix: Tuple[str, ...] = ()

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["kind"] = self.kind.value
        data["fault_prefix"] = list(self.fault_prefix)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "OracleFinding":
        return cls(
            kind=FindingKind(data["kind"]),
            node=data.get("node"),
            step=data["step"],
            detail=data["detail"],
            schedule=data.get("schedule", 0),
            seed=data.get("seed", 0),
            fault_prefix=tuple(data.get("fault_prefix", ())),
        )


def keyword_findings(logs: Iterable[Tuple[NodeId, int, str]], keywords: Sequence[str]) -> List[Tuple[NodeId, str]]:
    lowered = [k.lower() for k in keywords]
    hits = []
    for node, _, line in logs:
        text = line.lower()
        if any(k in text for k in lowered):
            hits.append((node, line))
    return hits


def stale_reads(ops: Iterable[ClientOp]) -> List[ClientOp]:
    """Successful reads returning less than what the session had already seen acknowledged"""
    stale = []
    for op in ops:
        if op.op != "Read" or not op.ok:
            continue
        value = op.value if op.value is not None else 0
        if value < op.floor:
            stale.append(op)
    return stale


@dataclass
class OracleChannel:
    """Per-schedule oracle state; `check` is called once per window"""

    keywords: Sequence[str] = field(default_factory=lambda: list(Config.ORACLE_KEYWORDS))
    max_leaderless_windows: int = Config.MAX_LEADERLESS_WINDOWS
    leaders_by_term: Dict[int, NodeId] = field(default_factory=dict)
    leaderless_windows: int = 0

    def check(self, logs: List[Tuple[NodeId, int, str]], assertions: List[AssertionRecord],
              ops: List[ClientOp], leader_present: bool, healthy: bool) -> List[Tuple[FindingKind, Optional[NodeId], str]]:
        found = []
        for node, line in keyword_findings(logs, self.keywords):
            found.append((FindingKind.LOG_KEYWORD, node, line))
        for record in assertions:
            found.append((FindingKind.ASSERTION_FIRED, record.node, record.detail))
        for node, _, line in logs:
            match = LEADER_LINE.search(line)
            if not match:
                continue
            term = int(match.group(1))
            other = self.leaders_by_term.setdefault(term, node)
            if other != node:
                found.append((FindingKind.CONSISTENCY_VIOLATION, node,
                              f"nodes {other} and {node} both leader in term {term}"))
        for op in stale_reads(ops):
            found.append((FindingKind.CONSISTENCY_VIOLATION, op.node,
                          f"stale read of {op.key}: got {op.value}, already acknowledged {op.floor}"))
        if leader_present or not healthy:
            self.leaderless_windows = 0
        else:
            self.leaderless_windows += 1
            if self.leaderless_windows == self.max_leaderless_windows + 1:
                found.append((FindingKind.NO_LEADER_TOO_LONG, None,
                              f"no leader for {self.leaderless_windows} windows with full connectivity"))
        return found


def check_oracles(logs: List[Tuple[NodeId, int, str]], assertions: List[AssertionRecord] = (),
                  ops: List[ClientOp] = (), leader_present: bool = True, healthy: bool = True,
                  keywords: Sequence[str] = Config.ORACLE_KEYWORDS, step: int = 0) -> List[OracleFinding]:
    """Stateless single-window check"""
    channel = OracleChannel(keywords=list(keywords))
    return [OracleFinding(kind, node, step, detail)
            for kind, node, detail in channel.check(list(logs), list(assertions), list(ops), leader_present, healthy)]


def aggregate_findings(findings: Iterable[OracleFinding]) -> List[Dict]:
    """Deduplicate by (kind, node, detail), keeping the first step of discovery and a count"""
    seen: Dict[Tuple, Dict] = {}
    for f in findings:
        key = (f.kind.value, f.node, f.detail)
        if key not in seen:
            seen[key] = {"kind": f.kind.value, "node": f.node, "detail": f.detail,
                         "first_step": f.step, "count": 0}
        seen[key]["count"] += 1
    return sorted(seen.values(), key=lambda d: (d["first_step"], d["kind"], str(d["node"]), d["detail"]))
