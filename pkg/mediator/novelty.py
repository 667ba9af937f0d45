"""
Distinct-state identification with MinHash signatures.

A summary is flattened into its canonical item set, hashed into a k-slot
MinHash signature and compared against the representatives seen so far: it is
a new state when no representative is at least ε similar.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd
from datasketch import MinHash

from config import Config
from models.errors import CalibrationError, SignatureMismatchError
from mediator.abstraction import EventHistory

logger = logging.getLogger(__name__)

StateId = int


@dataclass(frozen=True)
class StateSignature:
    k: int
    hash_seed: int
    minhash: MinHash
    item_count: int

    @property
    def minima(self) -> np.ndarray:
        return self.minhash.hashvalues

    def to_bytes(self) -> bytes:
        return np.asarray(self.minhash.hashvalues, dtype=np.uint64).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, k: int, hash_seed: int, item_count: int) -> "StateSignature":
        values = np.frombuffer(data, dtype=np.uint64).copy()
        if len(values) != k:
            raise SignatureMismatchError(f"stored signature has {len(values)} slots, expected {k}")
        return cls(k, hash_seed, MinHash(num_perm=k, seed=hash_seed, hashvalues=values), item_count)


def signature_of_items(items: Iterable[str], k: int = Config.MINHASH_K,
                       hash_seed: int = Config.HASH_SEED) -> StateSignature:
    if k < 1:
        raise ValueError("k must be at least 1")
    items = sorted(set(items))
    mh = MinHash(num_perm=k, seed=hash_seed)
    if items:
        mh.update_batch([item.encode("utf-8") for item in items])
    return StateSignature(k, hash_seed, mh, len(items))


def signature(h: EventHistory, k: int = Config.MINHASH_K, hash_seed: int = Config.HASH_SEED) -> StateSignature:
    return signature_of_items(h.items(), k, hash_seed)


def similarity(a: StateSignature, b: StateSignature) -> float:
    """Fraction of slots with equal minima"""
    if a.k != b.k or a.hash_seed != b.hash_seed:
        raise SignatureMismatchError(
            f"cannot compare signatures (k={a.k}, seed={a.hash_seed}) and (k={b.k}, seed={b.hash_seed})"
        )
    return float(np.count_nonzero(a.minima == b.minima)) / a.k


@dataclass
class RegistryEntry:
    state_id: StateId
    signature: StateSignature
    first_seen_step: int


class StateRegistry:
    """Ordered representatives of the distinct states seen in a campaign"""

    def __init__(self):
        self.entries: List[RegistryEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, sig: StateSignature, step: int = 0) -> StateId:
        state_id = len(self.entries)
        self.entries.append(RegistryEntry(state_id, sig, step))
        return state_id

    def classify(self, sig: StateSignature, epsilon: float, step: int = 0) -> Tuple[StateId, bool]:
        if not 0.0 < epsilon <= 1.0:
            raise ValueError(f"epsilon {epsilon} outside (0, 1]")
        if not self.entries:
            return self.add(sig, step), True
        sims = np.array([similarity(sig, entry.signature) for entry in self.entries])
        best = int(np.argmax(sims))
        if sims[best] < epsilon:
            return self.add(sig, step), True
        return self.entries[best].state_id, False

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(e.state_id, e.first_seen_step, e.signature.item_count) for e in self.entries],
            columns=["state_id", "first_seen_step", "item_count"],
        )

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)


def classify(sig: StateSignature, reg: StateRegistry, epsilon: float, step: int = 0) -> Tuple[StateId, bool]:
    return reg.classify(sig, epsilon, step)


EPSILON_GRID = np.round(np.arange(100, 0, -1) / 100.0, 2)


def _similarity_matrix(sigs: Sequence[StateSignature]) -> np.ndarray:
    minima = np.stack([s.minima for s in sigs])
    n = len(sigs)
    matrix = np.empty((n, n))
    for i in range(n):
        matrix[i] = np.count_nonzero(minima == minima[i], axis=1) / sigs[i].k
    return matrix


def _coinciding(matrix: np.ndarray, epsilon: float) -> float:
    """Fraction of summaries classified as not new when replayed in order into an empty registry"""
    reps: List[int] = []
    hits = 0
    for i in range(matrix.shape[0]):
        if reps and matrix[i, reps].max() >= epsilon:
            hits += 1
        else:
            reps.append(i)
    return hits / matrix.shape[0]


def coinciding_fraction(histories: Sequence[EventHistory], epsilon: float,
                        k: int = Config.MINHASH_K, hash_seed: int = Config.HASH_SEED) -> float:
    sigs = [signature(h, k, hash_seed) for h in histories]
    if not sigs:
        return 0.0
    return _coinciding(_similarity_matrix(sigs), epsilon)


def calibrate(steady_histories: Sequence[EventHistory], k: int = Config.MINHASH_K,
              hash_seed: int = Config.HASH_SEED,
              min_summaries: int = Config.CALIBRATION_MIN_SUMMARIES,
              target: float = Config.CALIBRATION_COINCIDE_FRACTION) -> float:
    """Largest ε on the 0.01 grid under which at least `target` of the steady summaries coincide"""
    if len(steady_histories) < min_summaries:
        raise CalibrationError(
            f"calibration needs at least {min_summaries} steady summaries, got {len(steady_histories)}"
        )
    sigs = [signature(h, k, hash_seed) for h in steady_histories]
    matrix = _similarity_matrix(sigs)
    for epsilon in EPSILON_GRID:
        if _coinciding(matrix, float(epsilon)) >= target:
            logger.info("calibrated epsilon %.2f over %d summaries", epsilon, len(sigs))
            return float(epsilon)
    logger.warning("no epsilon reaches %.0f%% coinciding summaries; using %.2f",
                   target * 100, EPSILON_GRID[-1])
    return float(EPSILON_GRID[-1])
