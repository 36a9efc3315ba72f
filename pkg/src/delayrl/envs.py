"""Seed-deterministic toy control tasks with no built-in notion of delay.

Both environments are plain Markov processes: the same action sequence from
the same seed always reproduces the same trajectory, no matter which wrapper
or scheduler drives them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EnvState:
    vector: np.ndarray
    discrete_index: int | None = None


@dataclass
class EnvAction:
    vector: np.ndarray
    discrete_index: int | None = None


@dataclass
class EnvSpec:
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    horizon: int
    discount: float
    n_states: int | None = None  # set for tabular tasks only
    n_actions: int | None = None

    @property
    def tabular(self) -> bool:
        return self.n_states is not None


class GridWorld:
    """Deterministic 5x5 grid. Start (0,0), goal (4,4), actions N/E/S/W.

    Reward is -1 per move and +10 for the move that enters the goal, which
    also terminates the episode. Episodes truncate after ``horizon`` moves.
    """

    SIZE = 5
    GOAL = (4, 4)
    # N, E, S, W as (dx, dy); y grows northward
    MOVES = ((0, 1), (1, 0), (0, -1), (-1, 0))
    STEP_REWARD = -1.0
    GOAL_REWARD = 10.0

    def __init__(self, rng: np.random.Generator | None = None, horizon: int = 50,
                 discount: float = 0.95):
        self.spec = EnvSpec(
            state_dim=2,
            action_dim=1,
            action_low=np.array([0.0]),
            action_high=np.array([3.0]),
            horizon=horizon,
            discount=discount,
            n_states=self.SIZE * self.SIZE,
            n_actions=4,
        )
        self._x = 0
        self._y = 0
        self._steps = 0
        self._done = True

    @classmethod
    def cell_index(cls, x: int, y: int) -> int:
        return y * cls.SIZE + x

    @classmethod
    def is_goal_index(cls, idx: int) -> bool:
        return idx == cls.cell_index(*cls.GOAL)

    @classmethod
    def transition(cls, s_idx: int, a_idx: int) -> tuple[int, float, bool]:
        """Pure one-step model: (next cell index, reward, entered goal).

        Moves off the grid leave the cell unchanged. Must not be called on
        the goal cell itself.
        """
        x, y = s_idx % cls.SIZE, s_idx // cls.SIZE
        dx, dy = cls.MOVES[a_idx]
        nx = min(max(x + dx, 0), cls.SIZE - 1)
        ny = min(max(y + dy, 0), cls.SIZE - 1)
        terminal = (nx, ny) == cls.GOAL
        reward = cls.GOAL_REWARD if terminal else cls.STEP_REWARD
        return cls.cell_index(nx, ny), reward, terminal

    def _state(self) -> EnvState:
        return EnvState(
            vector=np.array([float(self._x), float(self._y)]),
            discrete_index=self.cell_index(self._x, self._y),
        )

    def reset(self, seed: int | None = None) -> EnvState:
        # start cell is fixed; the seed argument exists for interface parity
        self._x, self._y = 0, 0
        self._steps = 0
        self._done = False
        return self._state()

    def step(self, action: EnvAction) -> tuple[EnvState, float, bool, bool]:
        if self._done:
            raise RuntimeError("step() called on a finished episode")
        a_idx = action.discrete_index
        if a_idx is None:
            a_idx = int(np.clip(round(float(action.vector[0])), 0, 3))
        nxt, reward, terminal = self.transition(self.cell_index(self._x, self._y), a_idx)
        self._x, self._y = nxt % self.SIZE, nxt // self.SIZE
        self._steps += 1
        truncated = (not terminal) and self._steps >= self.spec.horizon
        self._done = terminal or truncated
        return self._state(), reward, terminal, truncated


class Pendulum:
    """Torque-limited pendulum swing-up with a quadratic cost.

    State is (cos t, sin t, angular velocity) with angle 0 pointing up; the
    stable hanging equilibrium is at angle pi. Semi-implicit Euler
    integration with dt=0.05. Episodes never terminate early; they truncate
    at the horizon.
    """

    GRAVITY = 10.0
    MASS = 1.0
    LENGTH = 1.0
    DT = 0.05
    MAX_TORQUE = 2.0
    MAX_SPEED = 8.0

    def __init__(self, rng: np.random.Generator | None = None, horizon: int = 200,
                 discount: float = 0.99):
        self.spec = EnvSpec(
            state_dim=3,
            action_dim=1,
            action_low=np.array([-self.MAX_TORQUE]),
            action_high=np.array([self.MAX_TORQUE]),
            horizon=horizon,
            discount=discount,
        )
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._theta = np.pi
        self._theta_dot = 0.0
        self._steps = 0
        self._done = True

    @staticmethod
    def _wrap(angle: float) -> float:
        return ((angle + np.pi) % (2.0 * np.pi)) - np.pi

    def _state(self) -> EnvState:
        return EnvState(
            vector=np.array([np.cos(self._theta), np.sin(self._theta), self._theta_dot])
        )

    def reset(self, seed: int | None = None) -> EnvState:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._theta = self._rng.uniform(-np.pi, np.pi)
        self._theta_dot = self._rng.uniform(-1.0, 1.0)
        self._steps = 0
        self._done = False
        return self._state()

    def set_state(self, theta: float, theta_dot: float) -> EnvState:
        """Place the pendulum at an exact pose (tests and probes only)."""
        self._theta = float(theta)
        self._theta_dot = float(theta_dot)
        self._steps = 0
        self._done = False
        return self._state()

    def step(self, action: EnvAction) -> tuple[EnvState, float, bool, bool]:
        if self._done:
            raise RuntimeError("step() called on a finished episode")
        u = float(np.clip(action.vector[0], -self.MAX_TORQUE, self.MAX_TORQUE))
        th, thd = self._theta, self._theta_dot
        cost = self._wrap(th) ** 2 + 0.1 * thd**2 + 0.001 * u**2
        g, m, length, dt = self.GRAVITY, self.MASS, self.LENGTH, self.DT
        thd_new = thd + (3.0 * g / (2.0 * length) * np.sin(th) + 3.0 / (m * length**2) * u) * dt
        thd_new = float(np.clip(thd_new, -self.MAX_SPEED, self.MAX_SPEED))
        self._theta = th + thd_new * dt
        self._theta_dot = thd_new
        self._steps += 1
        truncated = self._steps >= self.spec.horizon
        self._done = truncated
        return self._state(), -cost, False, truncated


ENV_REGISTRY = {"gridworld": GridWorld, "pendulum": Pendulum}


def make_env(name: str, rng: np.random.Generator | None = None, **params):
    try:
        cls = ENV_REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; known: {sorted(ENV_REGISTRY)}")
    return cls(rng=rng, **params)
