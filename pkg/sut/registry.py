import json
from typing import Dict, Iterable


class InstrumentationRegistry:
    """Code ids of the instrumented functions and blocks a SUT declares at startup"""

    def __init__(self, labels: Iterable[str]):
        self._labels = list(labels)
        if len(set(self._labels)) != len(self._labels):
            raise ValueError("instrumentation labels must be unique")
        self._ids = {label: code_id for code_id, label in enumerate(self._labels)}

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, code_id: int) -> bool:
        return 0 <= code_id < len(self._labels)

    def id(self, label: str) -> int:
        return self._ids[label]

    def label(self, code_id: int) -> str:
        if code_id not in self:
            return f"code#{code_id}"
        return self._labels[code_id]

    def to_dict(self) -> Dict[str, str]:
        return {str(code_id): label for code_id, label in enumerate(self._labels)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "InstrumentationRegistry":
        mapping = json.loads(text)
        return cls(mapping[str(i)] for i in range(len(mapping)))


RAFT_REGISTRY = InstrumentationRegistry([
    "StartElection",
    "GrantVote",
    "BecomeLeader",
    "StepDown",
    "AppendEntries",
    "HandleAppendEntries",
    "RejectStaleTerm",
    "DeleteConflictingEntries",
    "MembershipRollback",
    "CommitEntry",
    "ApplyConfig",
    "ConfigChangeAppended",
    "TakeSnapshot",
    "InstallSnapshot",
    "ServeRead",
])
