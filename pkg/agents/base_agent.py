from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional

import numpy as np

from netsim.faults import FaultAction


class BaseAgent(ABC):
    """Base class for fault-scheduling agents"""

    def __init__(self, name: str, role: str, goal: str, alphabet: List[FaultAction], seed: int = 0):
        if not alphabet:
            raise ValueError("fault alphabet must not be empty")
        self.name = name
        self.role = role
        self.goal = goal
        self.alphabet = list(alphabet)
        self.rng = np.random.default_rng((seed, 11))

    @property
    def action_labels(self) -> List[str]:
        return [a.label for a in self.alphabet]

    @abstractmethod
    def select(self, state: int, mask: Optional[np.ndarray] = None) -> int:
        """Index into the alphabet of the next fault to inject"""
        pass

    @abstractmethod
    def learn(self, state: int, action: int, reward: float, next_state: int):
        """Incorporate the feedback of one step"""
        pass

    def observe_state(self, state: int):
        """Called when a state is classified for the first time"""
        pass

    def action(self, index: int) -> FaultAction:
        return self.alphabet[index]

    def rng_state(self) -> Dict[str, Any]:
        return self.rng.bit_generator.state

    def restore_rng(self, state: Dict[str, Any]):
        self.rng.bit_generator.state = state

    def describe(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "role": self.role,
            "goal": self.goal,
            "actions": self.action_labels,
        }
