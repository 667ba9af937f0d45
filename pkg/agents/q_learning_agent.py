"""
Tabular Q-learning fault scheduler.

Rewards are 0 for reaching a new abstract state and -1 otherwise; Q-values
are updated with a fixed learning rate and discount and actions are sampled
from a softmax over the current state's row.
"""

import logging
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from config import Config
from models.errors import PolicyError
from netsim.faults import FaultAction
from .base_agent import BaseAgent

logger = logging.getLogger(__name__)

BOUND_TOLERANCE = 1e-9


def reward(state: int, action: int, next_state: int, was_new: bool) -> float:
    return 0.0 if was_new else -1.0


class QTable:
    def __init__(self, n_actions: int, alpha: float = Config.ALPHA, gamma: float = Config.GAMMA):
        if n_actions < 1:
            raise PolicyError("a Q-table needs at least one action")
        if not (0.0 < alpha <= 1.0 and 0.0 < gamma <= 1.0):
            raise PolicyError(f"alpha={alpha} and gamma={gamma} must lie in (0, 1]")
        self.n_actions = n_actions
        self.alpha = alpha
        self.gamma = gamma
        self.rows: Dict[int, np.ndarray] = {}
        self.lower_bound = -1.0 / (1.0 - gamma) if gamma < 1.0 else -np.inf

    def __contains__(self, state: int) -> bool:
        return state in self.rows

    def row(self, state: int) -> np.ndarray:
        if state not in self.rows:
            self.rows[state] = np.zeros(self.n_actions)
        return self.rows[state]

    def update(self, state: int, action: int, r: float, next_state: int) -> float:
        q = self.row(state)
        best_next = float(self.row(next_state).max())
        value = (1.0 - self.alpha) * q[action] + self.alpha * (r + self.gamma * best_next)
        if value > BOUND_TOLERANCE or value < self.lower_bound - BOUND_TOLERANCE:
            raise PolicyError(f"Q({state}, {action}) = {value} outside [{self.lower_bound}, 0]")
        q[action] = value
        return value

    def probabilities(self, state: int, mask: Optional[np.ndarray] = None) -> np.ndarray:
        q = self.row(state)
        if mask is not None and mask.any():
            shifted = np.where(mask, q - q[mask].max(), -np.inf)
        else:
            shifted = q - q.max()
        weights = np.exp(shifted)
        return weights / weights.sum()

    def select(self, state: int, rng: np.random.Generator, mask: Optional[np.ndarray] = None) -> int:
        """Pick the first action whose cumulative probability exceeds a uniform draw"""
        probs = self.probabilities(state, mask)
        cumulative = np.cumsum(probs)
        p = rng.random()
        index = int(np.searchsorted(cumulative, p, side="right"))
        if index >= self.n_actions or probs[index] == 0.0:
            index = int(np.flatnonzero(probs)[-1])
        return index

    def to_dict(self) -> Dict[str, List[float]]:
        return {str(s): row.tolist() for s, row in sorted(self.rows.items())}

    @classmethod
    def from_dict(cls, data: Dict[str, List[float]], alpha: float, gamma: float, n_actions: int) -> "QTable":
        table = cls(n_actions, alpha, gamma)
        for state, values in data.items():
            if len(values) != n_actions:
                raise PolicyError(f"row {state} has {len(values)} values, expected {n_actions}")
            table.rows[int(state)] = np.array(values, dtype=float)
        return table

    def to_frame(self, labels: List[str]) -> pd.DataFrame:
        states = sorted(self.rows)
        frame = pd.DataFrame([self.rows[s] for s in states], columns=labels,
                             index=pd.Index(states, name="state_id"))
        return frame

    def to_csv(self, path, labels: List[str]):
        self.to_frame(labels).to_csv(path)


def update(q: QTable, state: int, action: int, r: float, next_state: int) -> float:
    return q.update(state, action, r, next_state)


def select(q: QTable, state: int, rng: np.random.Generator, mask: Optional[np.ndarray] = None) -> int:
    return q.select(state, rng, mask)


class QLearningAgent(BaseAgent):
    def __init__(self, alphabet: List[FaultAction], seed: int = 0,
                 alpha: float = Config.ALPHA, gamma: float = Config.GAMMA):
        super().__init__(
            name="Guided Scheduler",
            role="Q-learning nemesis",
            goal="Steer fault injection toward unseen abstract states",
            alphabet=alphabet,
            seed=seed,
        )
        self.table = QTable(len(self.alphabet), alpha, gamma)

    def observe_state(self, state: int):
        self.table.row(state)

    def select(self, state: int, mask: Optional[np.ndarray] = None) -> int:
        return self.table.select(state, self.rng, mask)

    def learn(self, state: int, action: int, r: float, next_state: int):
        value = self.table.update(state, action, r, next_state)
        logger.debug("Q(%d, %s) <- %.4f", state, self.alphabet[action].label, value)
