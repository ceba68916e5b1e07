"""Synthetic 5-state / 3-action MDP with a known two-cluster factorization.

Each next-state component copies, uniformly at random, one state or action
component from its own cluster:

    cluster 0: states s1, s3, s5 with actions a1, a2
    cluster 1: states s2, s4 with action a3
"""
from __future__ import annotations

import numpy as np

from .dataset import TransitionDataset, make_schema
from .factorizer import AdjacencyMatrix

N_STATE = 5
N_ACTION = 3
STATE_NAMES = tuple(f"s{i}" for i in range(1, N_STATE + 1))
ACTION_NAMES = tuple(f"a{i}" for i in range(1, N_ACTION + 1))
NEXT_NAMES = tuple(f"next_{s}" for s in STATE_NAMES)

# 0-based (state indices, action indices) per cluster
CLUSTERS = (
    ((0, 2, 4), (0, 1)),
    ((1, 3), (2,)),
)


def _pools() -> list[tuple[int, ...]]:
    """For each state component, candidate positions in the concatenated (state, action) vector."""
    pools = [()] * N_STATE
    for states, actions in CLUSTERS:
        pool = tuple(states) + tuple(N_STATE + a for a in actions)
        for s in states:
            pools[s] = pool
    return pools


POOLS = _pools()


def _check_unit(vec, size, name) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (size,):
        raise ValueError(f"{name} must have {size} components, got shape {v.shape}")
    if not np.isfinite(v).all() or (v < 0).any() or (v > 1).any():
        raise ValueError(f"{name} components must lie in [0, 1]")
    return v


def _copy_step(inputs: np.ndarray, picks: np.ndarray) -> np.ndarray:
    return np.array([inputs[POOLS[i][picks[i]]] for i in range(N_STATE)])


def synthetic_step(state, action, rng: np.random.Generator) -> np.ndarray:
    """Next state: every component copies a uniformly chosen member of its cluster pool."""
    state = _check_unit(state, N_STATE, "state")
    action = _check_unit(action, N_ACTION, "action")
    picks = np.array([rng.integers(len(POOLS[i])) for i in range(N_STATE)])
    return _copy_step(np.concatenate([state, action]), picks)


def synthetic_schema():
    return make_schema([(s, "continuous") for s in STATE_NAMES],
                       [(a, "continuous") for a in ACTION_NAMES])


def gen_synthetic_dataset(T: int, seed: int, reset: bool = False) -> TransitionDataset:
    """Roll out ``T`` transitions under a uniform random policy.

    The trajectory is chained (each next state becomes the following state)
    unless ``reset`` is set, in which case every state is drawn fresh from
    uniform [0, 1]^5.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    rng = np.random.default_rng(seed)
    state = rng.random(N_STATE)
    actions = rng.random((T, N_ACTION))
    sizes = np.array([len(p) for p in POOLS])
    picks = (rng.random((T, N_STATE)) * sizes).astype(np.int64)
    fresh = rng.random((T, N_STATE)) if reset else None

    pool_index = np.full((N_STATE, max(sizes)), -1)
    for i, pool in enumerate(POOLS):
        pool_index[i, : len(pool)] = pool
    source = pool_index[np.arange(N_STATE), picks]  # (T, 5) positions into inputs

    rows = np.empty((T, 2 * N_STATE + N_ACTION))
    rows[:, N_STATE:N_STATE + N_ACTION] = actions
    for t in range(T):
        if reset:
            state = fresh[t]
        inputs = np.concatenate([state, actions[t]])
        nxt = inputs[source[t]]
        rows[t, :N_STATE] = state
        rows[t, N_STATE + N_ACTION:] = nxt
        state = nxt
    return TransitionDataset(synthetic_schema(), rows)


def ground_truth_adjacency() -> AdjacencyMatrix:
    """5 x 8 binary matrix marking which inputs feed each next-state component."""
    inputs = STATE_NAMES + ACTION_NAMES
    values = np.zeros((N_STATE, len(inputs)), dtype=np.int8)
    for i, pool in enumerate(POOLS):
        values[i, list(pool)] = 1
    return AdjacencyMatrix(values, NEXT_NAMES, inputs)
