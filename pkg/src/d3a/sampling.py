"""Active boundary sample selection over the unlabeled target pool.

Also hosts the two baseline selectors used by the sampling comparison
(random and cluster-centre), which share the same budget rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, StateViolationError
from .model import ModelParams, forward
from .numkit import Rng, softmax

LABEL_MODES = ("pseudo", "oracle")


@dataclass
class SamplingState:
    n_target: int
    delta: float = 0.01
    max_rounds: int = 5
    start_epoch: int = 20
    period: int = 2
    label_mode: str = "pseudo"
    labeled_idx: list[int] = field(default_factory=list)
    labeled_y: list[int] = field(default_factory=list)
    remaining: np.ndarray | None = None
    rounds_done: int = 0

    def __post_init__(self):
        if self.label_mode not in LABEL_MODES:
            raise InvalidInputError(f"label_mode must be one of {LABEL_MODES}")
        if not 0.0 <= self.delta <= 1.0:
            raise InvalidInputError("delta must be a fraction in [0, 1]")
        if self.period < 1:
            raise InvalidInputError("sampling period must be >= 1")
        if self.remaining is None:
            self.remaining = np.arange(self.n_target, dtype=np.int64)

    @property
    def budget(self) -> int:
        """Samples committed per round: ``max(1, floor(delta * N_T))``."""
        return max(1, int(np.floor(self.delta * self.n_target)))

    def check(self) -> None:
        labeled = set(self.labeled_idx)
        rem = set(self.remaining.tolist())
        if len(labeled) != len(self.labeled_idx) or labeled & rem:
            raise StateViolationError("labeled set and pool overlap")
        if len(labeled) + len(rem) != self.n_target or len(rem) != len(self.remaining):
            raise StateViolationError("pool conservation violated")
        if self.rounds_done > self.max_rounds:
            raise StateViolationError("more rounds than allowed")


def importance(logits) -> np.ndarray:
    """``1 - (p_top1 - p_top2)`` per row of softmax probabilities."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits[None, :]
    if logits.shape[1] < 2:
        raise InvalidInputError("importance needs at least two classes")
    return importance_from_probs(softmax(logits))


def importance_from_probs(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    top2 = np.partition(probs, -2, axis=1)[:, -2:]
    return 1.0 - (top2[:, 1] - top2[:, 0])


def should_sample(epoch: int, state: SamplingState) -> bool:
    return (epoch >= state.start_epoch
            and (epoch - state.start_epoch) % state.period == 0
            and state.rounds_done < state.max_rounds
            and len(state.remaining) > 0)


def top_k(scores, candidates, k: int) -> np.ndarray:
    """Candidates with the ``k`` highest scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.int64)
    order = np.lexsort((candidates, -scores))
    return candidates[order[:k]]


def select(params: ModelParams, state: SamplingState, target_X) -> np.ndarray:
    """Indices (into the original pool) of the most boundary-like remaining samples."""
    if len(state.remaining) == 0:
        raise StateViolationError("cannot select from an empty pool")
    logits = forward(params, np.asarray(target_X)[state.remaining]).logits
    return top_k(importance(logits), state.remaining, min(state.budget, len(state.remaining)))


def select_random(state: SamplingState, rng: Rng) -> np.ndarray:
    if len(state.remaining) == 0:
        raise StateViolationError("cannot select from an empty pool")
    k = min(state.budget, len(state.remaining))
    return np.sort(state.remaining[rng.permutation(len(state.remaining))[:k]])


def select_cluster_centers(params: ModelParams, state: SamplingState, target_X, rng: Rng
                           ) -> np.ndarray:
    """k-means on projected remaining samples (k = budget); take the sample
    nearest to each centroid, skipping already-chosen ones."""
    from sklearn.cluster import KMeans

    if len(state.remaining) == 0:
        raise StateViolationError("cannot select from an empty pool")
    k = min(state.budget, len(state.remaining))
    z = forward(params, np.asarray(target_X)[state.remaining]).z
    km = KMeans(n_clusters=k, n_init=1, random_state=int(rng.next_u64(1)[0] % 2**31))
    km.fit(z)
    d = ((z[:, None, :] - km.cluster_centers_[None, :, :]) ** 2).sum(-1)
    chosen: list[int] = []
    taken = np.zeros(len(z), dtype=bool)
    for c in range(k):
        order = np.lexsort((np.arange(len(z)), d[:, c]))
        j = next(j for j in order if not taken[j])
        taken[j] = True
        chosen.append(int(state.remaining[j]))
    return np.array(sorted(chosen), dtype=np.int64)


def label_and_commit(state: SamplingState, selected, params: ModelParams | None = None,
                     target_X=None, true_labels=None) -> np.ndarray:
    """Move ``selected`` from the pool into the labelled set; returns assigned labels.

    Pseudo mode labels each sample with the model's argmax; oracle mode uses
    ``true_labels`` (indexed by original pool position).
    """
    if state.rounds_done >= state.max_rounds:
        raise StateViolationError("all sampling rounds already used")
    selected = np.asarray(selected, dtype=np.int64).ravel()
    if len(np.unique(selected)) != len(selected):
        raise StateViolationError("duplicate indices in selection")
    in_pool = np.isin(selected, state.remaining)
    if not np.all(in_pool):
        raise StateViolationError(
            f"indices not in the unlabeled pool: {selected[~in_pool].tolist()}")
    if state.label_mode == "oracle":
        if true_labels is None:
            raise InvalidInputError("oracle mode needs ground-truth labels")
        labels = np.asarray(true_labels, dtype=np.int64)[selected]
    else:
        if params is None or target_X is None:
            raise InvalidInputError("pseudo mode needs the model and target features")
        labels = np.argmax(forward(params, np.asarray(target_X)[selected]).logits, axis=1)
    state.labeled_idx.extend(int(i) for i in selected)
    state.labeled_y.extend(int(y) for y in labels)
    state.remaining = state.remaining[~np.isin(state.remaining, selected)]
    state.rounds_done += 1
    state.check()
    return labels
