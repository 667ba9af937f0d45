"""Nemesis vocabulary: fault actions, the alphabet and the network state they act on."""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from models.errors import FaultError


class FaultTag(str, Enum):
    PARTITION_RANDOM_HALVES = "PartitionRandomHalves"
    HEAL_NETWORK = "HealNetwork"
    CRASH_NODE = "CrashNode"
    RESTART_NODE = "RestartNode"
    PAUSE_NODE = "PauseNode"
    RESUME_NODE = "ResumeNode"
    ISOLATE_NODE = "IsolateNode"
    REQUEST_MEMBERSHIP_CHANGE = "RequestMembershipChange"
    NO_OP = "NoOp"

    @property
    def targets_node(self) -> bool:
        return self in SINGLE_NODE_TAGS


SINGLE_NODE_TAGS = frozenset({
    FaultTag.CRASH_NODE, FaultTag.RESTART_NODE, FaultTag.PAUSE_NODE,
    FaultTag.RESUME_NODE, FaultTag.ISOLATE_NODE, FaultTag.REQUEST_MEMBERSHIP_CHANGE,
})


class NodeStatus(str, Enum):
    RUNNING = "Running"
    CRASHED = "Crashed"
    PAUSED = "Paused"


@dataclass(frozen=True, slots=True)
class FaultAction:
    tag: FaultTag
    target: Optional[int] = None

    def __post_init__(self):
        if self.tag.targets_node != (self.target is not None):
            raise FaultError(f"{self.tag.value}: target must be present iff the fault addresses one node")

    @property
    def label(self) -> str:
        if self.target is None:
            return self.tag.value
        return f"{self.tag.value}({self.target})"

    @classmethod
    def parse(cls, label: str) -> "FaultAction":
        """Inverse of `label`"""
        if label.endswith(")") and "(" in label:
            name, _, rest = label.partition("(")
            return cls(FaultTag(name), int(rest[:-1]))
        return cls(FaultTag(label))


def expand_alphabet(tag_names: Sequence[str], node_count: int) -> List[FaultAction]:
    """
    Turn configured fault names into the fixed action list (Q-table columns).

    Single-node faults expand to one action per node, in node order.
    """
    actions = []
    for name in tag_names:
        try:
            tag = FaultTag(name)
        except ValueError:
            raise FaultError(f"unknown fault '{name}'") from None
        if tag.targets_node:
            actions.extend(FaultAction(tag, n) for n in range(node_count))
        else:
            actions.append(FaultAction(tag))
    if not actions:
        raise FaultError("fault alphabet is empty")
    return actions


class NetworkState:
    """Symmetric reachability matrix plus per-node run status"""

    def __init__(self, node_count: int):
        self.node_count = node_count
        self.reachability = np.ones((node_count, node_count), dtype=bool)
        self.node_status: List[NodeStatus] = [NodeStatus.RUNNING] * node_count

    def check_node(self, node: int):
        if node is None or not 0 <= node < self.node_count:
            raise FaultError(f"node {node} outside [0, {self.node_count})")

    def reachable(self, src: int, dst: int) -> bool:
        return bool(self.reachability[src, dst])

    def heal(self):
        self.reachability[:, :] = True

    def sever(self, group_a: Sequence[int], group_b: Sequence[int]):
        for a in group_a:
            for b in group_b:
                if a != b:
                    self.reachability[a, b] = False
                    self.reachability[b, a] = False

    def isolate(self, node: int):
        others = [n for n in range(self.node_count) if n != node]
        self.sever([node], others)

    def partition_sets(self) -> List[List[int]]:
        """Connected components of the reachability relation, smallest node first"""
        seen = set()
        groups = []
        for start in range(self.node_count):
            if start in seen:
                continue
            group = []
            stack = [start]
            while stack:
                n = stack.pop()
                if n in seen:
                    continue
                seen.add(n)
                group.append(n)
                stack.extend(int(m) for m in np.flatnonzero(self.reachability[n]) if m not in seen)
            groups.append(sorted(group))
        return groups

    def fully_connected(self) -> bool:
        return bool(self.reachability.all())

    def to_dict(self) -> Dict:
        return {
            "partitions": self.partition_sets(),
            "status": [s.value for s in self.node_status],
        }

    def is_possible(self, action: FaultAction) -> bool:
        """Whether the action can change anything in the current state"""
        if action.target is None:
            return True
        status = self.node_status[action.target]
        if action.tag in (FaultTag.CRASH_NODE, FaultTag.PAUSE_NODE):
            return status == NodeStatus.RUNNING
        if action.tag == FaultTag.RESTART_NODE:
            return status == NodeStatus.CRASHED
        if action.tag == FaultTag.RESUME_NODE:
            return status == NodeStatus.PAUSED
        return True

    def action_mask(self, alphabet: Sequence[FaultAction]) -> np.ndarray:
        return np.array([self.is_possible(a) for a in alphabet], dtype=bool)
