from typing import List, Optional

import numpy as np

from netsim.faults import FaultAction
from .base_agent import BaseAgent


class RandomAgent(BaseAgent):
    """Uncontrolled baseline: every fault of the alphabet is equally likely, whatever the state"""

    def __init__(self, alphabet: List[FaultAction], seed: int = 0):
        super().__init__(
            name="Random Scheduler",
            role="uniform nemesis",
            goal="Inject faults without feedback",
            alphabet=alphabet,
            seed=seed,
        )

    def select(self, state: int, mask: Optional[np.ndarray] = None) -> int:
        return int(self.rng.integers(0, len(self.alphabet)))

    def learn(self, state: int, action: int, reward: float, next_state: int):
        pass
