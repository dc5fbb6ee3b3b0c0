"""Environment-independent machinery: registry, rollouts, task files.

Environments are value-type state machines over float64 state vectors. Every
operation has a vectorized form working on ``(B, state_dim)`` batches; the
scalar API wraps batches of one and adds input validation. Episode status
codes are small ints so whole batches can be tracked in one array.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ALIVE = 0
SOLVED = 1
CRASHED = 2
TIMED_OUT = 3
FAILED_BY_GAMMA = 4

STATUS_NAMES = {
    ALIVE: "Alive",
    SOLVED: "Solved",
    CRASHED: "Crashed",
    TIMED_OUT: "TimedOut",
    FAILED_BY_GAMMA: "FailedByGamma",
}


class EnvError(ValueError):
    """Invalid environment name, state, or action."""


@dataclass(frozen=True)
class EnvOps:
    """Bundle of per-environment constants and vectorized operations."""

    name: str
    state_dim: int
    state_fields: tuple[str, ...]
    horizon: int
    gamma: float
    action_kind: str            # "discrete" or "box"
    n_actions: int              # action count (discrete) or action dim (box)
    action_low: float
    action_high: float
    action_names: tuple[str, ...]
    sample_raw: Callable        # (n, rng) -> (n, state_dim) states
    step_batch: Callable        # (states, actions, rng) -> (next_states, status)
    expert_batch: Callable      # (states) -> actions
    featurize_policy: Callable  # (states) -> policy-net inputs
    featurize_embed: Callable   # (states) -> embedding-net inputs
    strip_context: Callable     # (states) -> states without task-identifying fields
    validate_state: Callable    # (state vector) -> None, raises EnvError
    bias_filters: dict[str, Callable] = field(default_factory=dict)
    policy_hidden: tuple[int, ...] = (32, 32)
    embed_hidden: tuple[int, ...] = (32, 32)
    embed_dim: int = 6          # default output dim with norm constraints
    embed_dim_wonorm: int = 5   # default without norm constraints
    action_symbols: Callable = None  # (actions) -> int codes for edit distance


_REGISTRY: dict[str, EnvOps] = {}


def register(ops: EnvOps) -> EnvOps:
    _REGISTRY[ops.name] = ops
    return ops


def get_env(name: str) -> EnvOps:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise EnvError(
            f"unknown environment {name!r}; valid options: {', '.join(sorted(_REGISTRY))}"
        ) from None


def env_names() -> list[str]:
    return sorted(_REGISTRY)


@dataclass
class Task:
    """One task: an environment plus the initial state that defines it."""

    env: str
    state0: np.ndarray

    def __post_init__(self):
        self.state0 = np.asarray(self.state0, dtype=np.float64)
        get_env(self.env).validate_state(self.state0)


@dataclass
class StepOutcome:
    next_state: np.ndarray
    reward: float
    terminal: int  # one of the status codes

    @property
    def terminal_name(self) -> str:
        return STATUS_NAMES[self.terminal]


@dataclass
class Trajectory:
    """Visited (state, action) pairs plus how the episode ended."""

    states: list[np.ndarray]
    actions: list
    final: StepOutcome


class ExpertPolicy:
    """Deterministic scripted controller backed by the env's expert rule."""

    def act(self, ops: EnvOps, states: np.ndarray, rng) -> np.ndarray:
        return ops.expert_batch(states)


class UniformRandomPolicy:
    def act(self, ops: EnvOps, states: np.ndarray, rng) -> np.ndarray:
        b = states.shape[0]
        if ops.action_kind == "discrete":
            return rng.integers(0, ops.n_actions, size=b)
        return rng.uniform(ops.action_low, ops.action_high, size=(b, ops.n_actions))


def _validate_action(ops: EnvOps, action) -> None:
    if ops.action_kind == "discrete":
        a = int(action)
        if not 0 <= a < ops.n_actions:
            raise EnvError(
                f"{ops.name}: action {action!r} not in 0..{ops.n_actions - 1} "
                f"({', '.join(ops.action_names)})"
            )
    else:
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (ops.n_actions,):
            raise EnvError(f"{ops.name}: action must have shape ({ops.n_actions},)")
        if np.any(a < ops.action_low) or np.any(a > ops.action_high):
            raise EnvError(
                f"{ops.name}: action {a} outside [{ops.action_low}, {ops.action_high}]"
            )


def step(env: str, state: np.ndarray, action, rng: np.random.Generator) -> StepOutcome:
    """Single validated environment step."""
    ops = get_env(env)
    state = np.asarray(state, dtype=np.float64)
    ops.validate_state(state)
    _validate_action(ops, action)
    if ops.action_kind == "discrete":
        actions = np.array([int(action)])
    else:
        actions = np.asarray(action, dtype=np.float64)[None, :]
    next_states, status = ops.step_batch(state[None, :], actions, rng)
    terminal = int(status[0])
    reward = 1.0 if terminal == SOLVED else 0.0
    return StepOutcome(next_states[0], reward, terminal)


def sample_tasks(env: str, n: int, rng: np.random.Generator,
                 bias: str | None = None) -> np.ndarray:
    """Sample n initial states, optionally restricted by a named bias filter.

    Raises EnvError after 10**5 consecutive rejected draws.
    """
    ops = get_env(env)
    if bias is None:
        return ops.sample_raw(n, rng)
    try:
        pred = ops.bias_filters[bias]
    except KeyError:
        raise EnvError(
            f"{env}: unknown bias {bias!r}; valid: {', '.join(sorted(ops.bias_filters))}"
        ) from None
    out = np.empty((n, ops.state_dim))
    filled = 0
    rejected_run = 0
    while filled < n:
        chunk = ops.sample_raw(max(n - filled, 64), rng)
        keep = chunk[pred(chunk)]
        if keep.shape[0] == 0:
            rejected_run += chunk.shape[0]
            if rejected_run > 10**5:
                raise EnvError(f"{env}: bias {bias!r} rejected >1e5 consecutive draws")
            continue
        rejected_run = 0
        take = min(keep.shape[0], n - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


def sample_task(env: str, rng: np.random.Generator, bias: str | None = None) -> Task:
    return Task(env, sample_tasks(env, 1, rng, bias)[0])


def expert_action(env: str, state: np.ndarray):
    """Scripted expert action for one state."""
    ops = get_env(env)
    state = np.asarray(state, dtype=np.float64)
    ops.validate_state(state)
    action = ops.expert_batch(state[None, :])[0]
    if ops.action_kind == "discrete":
        return int(action)
    return action


def rollout_batch(env: str | EnvOps, states0: np.ndarray, policy,
                  rng: np.random.Generator, record: bool = False):
    """Run a batch of episodes to termination.

    Returns ``(outcomes, status)`` where outcomes is a uint8 success vector,
    or ``(outcomes, status, trajectories)`` when record is set. Finished
    episodes drop out of the stepped set, so cost tracks the number of alive
    episodes per step.
    """
    ops = env if isinstance(env, EnvOps) else get_env(env)
    states = np.array(states0, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != ops.state_dim:
        raise EnvError(f"{ops.name}: batch must have shape (B, {ops.state_dim})")
    b = states.shape[0]
    status = np.full(b, ALIVE, dtype=np.int8)
    alive = np.arange(b)
    recs = [Trajectory([], [], None) for _ in range(b)] if record else None
    for _ in range(ops.horizon):
        if alive.size == 0:
            break
        cur = states[alive]
        actions = policy.act(ops, cur, rng)
        next_states, st = ops.step_batch(cur, actions, rng)
        if record:
            for k, idx in enumerate(alive):
                recs[idx].states.append(cur[k].copy())
                recs[idx].actions.append(
                    int(actions[k]) if ops.action_kind == "discrete" else actions[k].copy()
                )
        states[alive] = next_states
        status[alive] = st
        alive = alive[st == ALIVE]
    status[status == ALIVE] = TIMED_OUT
    outcomes = (status == SOLVED).astype(np.uint8)
    if record:
        for idx in range(b):
            reward = 1.0 if status[idx] == SOLVED else 0.0
            recs[idx].final = StepOutcome(states[idx].copy(), reward, int(status[idx]))
        return outcomes, status, recs
    return outcomes, status


def rollout(env: str, task: Task | np.ndarray, policy, rng: np.random.Generator,
            record: bool = False):
    """One episode from a task's initial state; returns (outcome_bit, trajectory | None)."""
    state0 = task.state0 if isinstance(task, Task) else np.asarray(task, dtype=np.float64)
    if record:
        outcomes, _, recs = rollout_batch(env, state0[None, :], policy, rng, record=True)
        return int(outcomes[0]), recs[0]
    outcomes, _ = rollout_batch(env, state0[None, :], policy, rng)
    return int(outcomes[0]), None


def save_tasks(path, env: str, states: np.ndarray) -> None:
    """Write tasks as CSV: header ``env,<state fields>``, one task per row."""
    ops = get_env(env)
    states = np.asarray(states, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["env", *ops.state_fields])
        for row in states:
            writer.writerow([env, *[repr(float(v)) for v in row]])


def load_tasks(path) -> tuple[str, np.ndarray]:
    """Read a task CSV written by save_tasks; the file must hold one env."""
    with open(path, "r", newline="", encoding="utf-8") as fp:
        reader = csv.reader(fp)
        header = next(reader)
        rows = list(reader)
    if not rows:
        raise EnvError(f"{path}: no tasks")
    env = rows[0][0]
    ops = get_env(env)
    if tuple(header[1:]) != ops.state_fields:
        raise EnvError(f"{path}: header {header[1:]} != {list(ops.state_fields)}")
    states = np.empty((len(rows), ops.state_dim))
    for i, row in enumerate(rows):
        if row[0] != env:
            raise EnvError(f"{path}: mixed environments ({env} and {row[0]})")
        states[i] = [float(v) for v in row[1:]]
    return env, states


from taskemb.envs import cartpolevar, multikeynav, pointmass  # noqa: E402,F401  (registers envs)
