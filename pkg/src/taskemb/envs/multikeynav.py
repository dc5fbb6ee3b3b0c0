"""One-dimensional key-and-door navigation on the [0, 1] segment.

The agent walks left/right with a noisy step, picks up keys on four fixed
segments, and finishes at the door segment on the right. Each door type
requires a specific pair of keys; picking a key off its segment or finishing
without the requirements crashes the episode. Variants with identical door
requirements ("all doors need A+B" / "all doors need A") exist for ablations.

State layout: (location, keyA, keyB, keyC, keyD, doorBit1, doorBit2).
Actions: moveLeft, moveRight, pickKeyA..pickKeyD, finish.
"""

from __future__ import annotations

import numpy as np

from taskemb.envs import core

KEY_SEGMENTS = np.array([[0.0, 0.1], [0.2, 0.3], [0.4, 0.5], [0.6, 0.7]])
DOOR_SEGMENT = (0.9, 1.0)
STEP_SIZE = 0.075
STEP_NOISE = 0.01

MOVE_LEFT, MOVE_RIGHT = 0, 1
PICK0 = 2  # pickKeyA..pickKeyD are actions 2..5
FINISH = 6

ACTION_NAMES = ("moveLeft", "moveRight", "pickKeyA", "pickKeyB", "pickKeyC",
                "pickKeyD", "finish")

# Required keys per door type (rows: door index from bits, cols: key A..D).
REQUIREMENTS = {
    "standard": np.array([
        [1, 1, 0, 0],   # type 1 (bits 00): A, B
        [1, 0, 1, 0],   # type 2 (bits 01): A, C
        [0, 1, 0, 1],   # type 3 (bits 10): B, D
        [0, 0, 1, 1],   # type 4 (bits 11): C, D
    ], dtype=bool),
    "all_ab": np.tile(np.array([1, 1, 0, 0], dtype=bool), (4, 1)),
    "all_a": np.tile(np.array([1, 0, 0, 0], dtype=bool), (4, 1)),
}


def _door_index(states: np.ndarray) -> np.ndarray:
    return (2 * states[:, 5] + states[:, 6]).astype(np.intp)


def _make_step(req: np.ndarray):
    def step_batch(states, actions, rng):
        b = states.shape[0]
        eps = rng.uniform(-STEP_NOISE, STEP_NOISE, size=b)
        fail_u = rng.uniform(0.0, 1.0, size=b)
        new = states.copy()
        status = np.full(b, core.ALIVE, dtype=np.int8)
        loc = states[:, 0]

        left = actions == MOVE_LEFT
        right = actions == MOVE_RIGHT
        new[left, 0] = np.clip(loc[left] - (STEP_SIZE + eps[left]), 0.0, 1.0)
        new[right, 0] = np.clip(loc[right] + (STEP_SIZE + eps[right]), 0.0, 1.0)

        for k in range(4):
            pick = actions == PICK0 + k
            if not pick.any():
                continue
            lo, hi = KEY_SEGMENTS[k]
            on_segment = (loc >= lo) & (loc <= hi)
            new[pick & on_segment, 1 + k] = 1.0
            status[pick & ~on_segment] = core.CRASHED

        fin = actions == FINISH
        if fin.any():
            at_door = (loc >= DOOR_SEGMENT[0]) & (loc <= DOOR_SEGMENT[1])
            has_keys = np.all(states[:, 1:5] >= req[_door_index(states)], axis=1)
            status[fin & at_door & has_keys] = core.SOLVED
            status[fin & ~(at_door & has_keys)] = core.CRASHED

        alive = status == core.ALIVE
        status[alive & (fail_u < 1.0 - GAMMA)] = core.FAILED_BY_GAMMA
        return new, status

    return step_batch


def _make_expert(req: np.ndarray):
    def expert_batch(states):
        loc = states[:, 0]
        have = states[:, 1:5] >= 0.5
        missing = req[_door_index(states)] & ~have
        any_missing = missing.any(axis=1)
        first = np.argmax(missing, axis=1)  # leftmost missing key (segments are ordered)
        seg_lo = KEY_SEGMENTS[first, 0]
        seg_hi = KEY_SEGMENTS[first, 1]

        actions = np.full(states.shape[0], MOVE_RIGHT, dtype=np.int64)
        # All requirements met: head to the door and finish.
        done = ~any_missing
        actions[done & (loc >= DOOR_SEGMENT[0])] = FINISH
        # Otherwise walk to / pick the leftmost missing key.
        on_seg = any_missing & (loc >= seg_lo) & (loc <= seg_hi)
        actions[on_seg] = PICK0 + first[on_seg]
        actions[any_missing & (loc < seg_lo)] = MOVE_RIGHT
        actions[any_missing & (loc > seg_hi)] = MOVE_LEFT
        return actions

    return expert_batch


def _sample_raw(n, rng):
    states = np.empty((n, 7))
    states[:, 0] = rng.uniform(0.0, 1.0, size=n)
    states[:, 1:5] = (rng.uniform(size=(n, 4)) < 0.5).astype(np.float64)
    door = rng.integers(0, 4, size=n)
    states[:, 5] = door // 2
    states[:, 6] = door % 2
    return states


def _validate_state(state):
    state = np.asarray(state)
    if state.shape != (7,):
        raise core.EnvError(f"multikeynav: state must have 7 components, got {state.shape}")
    if not 0.0 <= state[0] <= 1.0:
        raise core.EnvError(f"multikeynav: location {state[0]} outside [0, 1]")
    bits = state[1:]
    if not np.all((bits == 0.0) | (bits == 1.0)):
        raise core.EnvError("multikeynav: key/door flags must be 0 or 1")


def _identity(states):
    return np.asarray(states, dtype=np.float64).copy()


def _strip_context(states):
    # Door bits identify the task's reward function; drop them.
    return np.asarray(states, dtype=np.float64)[:, :5].copy()


GAMMA = 0.999

_BIAS = {f"door_type_{i + 1}": (lambda i: (lambda s: _door_index(s) == i))(i)
         for i in range(4)}


def _make_ops(name: str, variant: str) -> core.EnvOps:
    req = REQUIREMENTS[variant]
    return core.EnvOps(
        name=name,
        state_dim=7,
        state_fields=("location", "keyA", "keyB", "keyC", "keyD", "doorBit1", "doorBit2"),
        horizon=40,
        gamma=GAMMA,
        action_kind="discrete",
        n_actions=7,
        action_low=0,
        action_high=6,
        action_names=ACTION_NAMES,
        sample_raw=_sample_raw,
        step_batch=_make_step(req),
        expert_batch=_make_expert(req),
        featurize_policy=_identity,
        featurize_embed=_identity,
        strip_context=_strip_context,
        validate_state=_validate_state,
        bias_filters=dict(_BIAS),
        policy_hidden=(32, 32),
        embed_hidden=(32, 32),
        embed_dim=6,
        embed_dim_wonorm=5,
        action_symbols=lambda actions: np.asarray(actions, dtype=np.int64),
    )


core.register(_make_ops("multikeynav", "standard"))
core.register(_make_ops("multikeynav_ab", "all_ab"))
core.register(_make_ops("multikeynav_a", "all_a"))
