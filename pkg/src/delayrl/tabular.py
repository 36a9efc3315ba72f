"""Exact learners for the gridworld: Q-learning over augmented states and a
value-iteration oracle on the augmented model for ground-truth policies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import DelaySpec, SampledDelays
from .envs import EnvAction, GridWorld
from .scheduler import AugmentedState, DelayedRunner, SchedulerMode
from .seeding import make_streams

MAX_TABLE_ENTRIES = 100_000


class AugCodec:
    """Integer coding of (anchor cell, action window) pairs.

    index = cell * A**delta + mixed-radix action history with the oldest
    action most significant, matching the flattened augmented layout.
    """

    def __init__(self, n_states: int, n_actions: int, delta: int):
        size = n_states * n_actions**delta
        if size * n_actions > MAX_TABLE_ENTRIES:
            raise ValueError(
                f"augmented table with delta={delta} needs {size * n_actions} entries, "
                f"over the {MAX_TABLE_ENTRIES} cap"
            )
        self.n_states = n_states
        self.n_actions = n_actions
        self.delta = delta
        self.size = size

    def index(self, x: AugmentedState) -> int:
        idx = x.base.discrete_index
        for a in x.actions:
            idx = idx * self.n_actions + a.discrete_index
        return idx

    def index_of(self, s_idx: int, history) -> int:
        idx = s_idx
        for a in history:
            idx = idx * self.n_actions + a
        return idx

    def decode(self, idx: int) -> tuple[int, tuple[int, ...]]:
        hist = []
        for _ in range(self.delta):
            idx, a = divmod(idx, self.n_actions)
            hist.append(a)
        return idx, tuple(reversed(hist))

    def empty_table(self) -> np.ndarray:
        return np.zeros((self.size, self.n_actions))


def q_update(table: np.ndarray, x: int, a: int, r: float, x_next: int,
             lr: float, gamma: float, done: bool = False) -> float:
    """One tabular Q-learning step; returns the new value.

    ``done`` marks true termination: no bootstrap from the successor.
    """
    bootstrap = 0.0 if done else float(table[x_next].max())
    new = (1.0 - lr) * table[x, a] + lr * (r + gamma * bootstrap)
    table[x, a] = new
    return new


def augmented_grid_model(env: GridWorld, delta: int):
    """Enumerate the delayed gridworld as an explicit finite model.

    Returns (codec, next_index, reward, next_done, absorbing) where
    absorbing marks augmented states whose hidden current state has already
    reached the goal (the episode is over; their value is 0) and next_done
    marks transitions whose hidden current state enters the goal.
    """
    spec = env.spec
    codec = AugCodec(spec.n_states, spec.n_actions, delta)
    n_x, n_a = codec.size, spec.n_actions
    next_index = np.zeros((n_x, n_a), dtype=np.int64)
    reward = np.zeros((n_x, n_a))
    next_done = np.zeros((n_x, n_a), dtype=bool)
    absorbing = np.zeros(n_x, dtype=bool)

    for x in range(n_x):
        s_idx, hist = codec.decode(x)
        # roll the anchor forward through the action window to recover the
        # hidden current state; hitting the goal anywhere means the episode
        # already ended
        cur, dead = s_idx, GridWorld.is_goal_index(s_idx)
        for h in hist:
            if dead:
                break
            cur, _, entered = GridWorld.transition(cur, h)
            dead = dead or entered
        absorbing[x] = dead
        if dead:
            continue
        for a in range(n_a):
            cur_next, r, entered = GridWorld.transition(cur, a)
            reward[x, a] = r
            next_done[x, a] = entered
            if delta == 0:
                next_index[x, a] = cur_next
            else:
                anchor_next, _, _ = GridWorld.transition(s_idx, hist[0])
                next_index[x, a] = codec.index_of(anchor_next, hist[1:] + (a,))
    return codec, next_index, reward, next_done, absorbing


def value_iteration_oracle(env: GridWorld, delta: int, tol: float = 1e-10,
                           gamma: float | None = None) -> np.ndarray:
    """Optimal Q-values of the augmented gridworld by synchronous sweeps."""
    gamma = env.spec.discount if gamma is None else gamma
    codec, nxt, rew, ndone, absorbing = augmented_grid_model(env, delta)
    q = codec.empty_table()
    live = ~absorbing
    while True:
        v_next = q.max(axis=1)
        target = rew + gamma * np.where(ndone, 0.0, v_next[nxt])
        target[absorbing] = 0.0
        residual = np.abs(target[live] - q[live]).max() if live.any() else 0.0
        q = target
        if residual < tol:
            return q


def exhaustive_sweep_fixed_point(env: GridWorld, delta: int, tol: float = 1e-10,
                                 gamma: float | None = None,
                                 lr: float = 1.0) -> np.ndarray:
    """Fixed point of repeated q_update sweeps over every live pair.

    Independent route to the same answer as value_iteration_oracle: scalar
    updates in enumeration order instead of vectorized synchronous sweeps.
    """
    gamma = env.spec.discount if gamma is None else gamma
    codec, nxt, rew, ndone, absorbing = augmented_grid_model(env, delta)
    q = codec.empty_table()
    n_a = codec.n_actions
    while True:
        residual = 0.0
        for x in range(codec.size):
            if absorbing[x]:
                continue
            for a in range(n_a):
                old = q[x, a]
                new = q_update(q, x, a, rew[x, a], nxt[x, a], lr, gamma,
                               done=bool(ndone[x, a]))
                residual = max(residual, abs(new - old))
        if residual < tol:
            return q


class EpsGreedyTabular:
    """Epsilon-greedy policy over an augmented Q-table."""

    def __init__(self, table: np.ndarray, codec: AugCodec, rng: np.random.Generator,
                 eps: float = 0.0):
        self.table = table
        self.codec = codec
        self.rng = rng
        self.eps = eps

    def act(self, x: AugmentedState) -> EnvAction:
        if self.eps > 0.0 and self.rng.random() < self.eps:
            a = int(self.rng.integers(self.codec.n_actions))
        else:
            a = int(self.table[self.codec.index(x)].argmax())
        return EnvAction(vector=np.array([float(a)]), discrete_index=a)


@dataclass
class TabularResult:
    table: np.ndarray
    returns: list
    codec: AugCodec
    visited: list  # per-episode lists of augmented indices seen at decisions


def train_tabular(mode: SchedulerMode, episodes: int, seed: int,
                  delay_spec: DelaySpec | None = None, env: GridWorld | None = None,
                  lr: float = 0.1, eps_start: float = 1.0, eps_final: float = 0.05,
                  streams=None) -> TabularResult:
    """Scheduler-driven Q-learning on the delayed gridworld.

    Epsilon anneals linearly from eps_start to eps_final over the first half
    of the episodes. Each emitted tuple triggers one q_update.
    """
    if env is None:
        env = GridWorld()
    if not env.spec.tabular:
        raise ValueError("train_tabular needs a tabular environment")
    if delay_spec is None:
        delay_spec = DelaySpec.uniform(mode.o_max) if mode.o_max >= 1 else DelaySpec.point(0)
    if streams is None:
        streams = make_streams(seed)
    gamma = env.spec.discount
    codec = AugCodec(env.spec.n_states, env.spec.n_actions, mode.delta)
    table = codec.empty_table()
    policy = EpsGreedyTabular(table, codec, streams.explore)
    runner = DelayedRunner(env, mode, SampledDelays(delay_spec, streams.delay))

    def learn(tup):
        q_update(table, codec.index(tup.x_now), tup.a.discrete_index, tup.r,
                 codec.index(tup.x_next), lr, gamma, done=tup.done)

    returns = []
    visited = []
    anneal = max(1, episodes // 2)
    for ep in range(episodes):
        policy.eps = max(eps_final, eps_start + (eps_final - eps_start) * ep / anneal)
        seen: list[int] = []
        record_policy = _VisitRecorder(policy, codec, seen)
        result = runner.run_episode(record_policy, on_tuple=learn)
        returns.append(result.ep_return)
        visited.append(seen)
    return TabularResult(table=table, returns=returns, codec=codec, visited=visited)


class _VisitRecorder:
    """Policy wrapper that notes which augmented indices get decided on."""

    def __init__(self, policy, codec: AugCodec, sink: list):
        self.policy = policy
        self.codec = codec
        self.sink = sink

    def act(self, x: AugmentedState) -> EnvAction:
        self.sink.append(self.codec.index(x))
        return self.policy.act(x)


def greedy_matches_oracle(table: np.ndarray, oracle: np.ndarray, indices,
                          rel_tol: float = 1e-9) -> float:
    """Fraction of the given augmented indices where the learned greedy
    action is optimal under the oracle (ties count as optimal)."""
    indices = sorted(set(indices))
    if not indices:
        return 1.0
    hits = 0
    for x in indices:
        a = int(table[x].argmax())
        best = oracle[x].max()
        slack = rel_tol * max(1.0, abs(best))
        hits += oracle[x, a] >= best - slack
    return hits / len(indices)


def greedy_rollout(env: GridWorld, table: np.ndarray, codec: AugCodec,
                   max_steps: int | None = None) -> tuple[list[int], float]:
    """Undelayed greedy walk from the start cell (delta must be 0)."""
    if codec.delta != 0:
        raise ValueError("greedy_rollout runs on the raw table only")
    s = env.reset()
    path = [s.discrete_index]
    total = 0.0
    limit = max_steps if max_steps is not None else env.spec.horizon
    for _ in range(limit):
        a = int(table[s.discrete_index].argmax())
        s, r, term, trunc = env.step(EnvAction(vector=np.array([float(a)]), discrete_index=a))
        path.append(s.discrete_index)
        total += r
        if term or trunc:
            break
    return path, total
