"""Environment contracts: determinism, rewards, termination flags."""

import numpy as np
import pytest

from delayrl.envs import EnvAction, GridWorld, Pendulum, make_env


def _grid_action(idx):
    return EnvAction(vector=np.array([float(idx)]), discrete_index=idx)


def test_grid_reset_start_cell_fixed():
    env = GridWorld()
    for seed in (0, 7, 12345):
        s = env.reset(seed)
        assert s.discrete_index == 0
        assert np.array_equal(s.vector, [0.0, 0.0])


def test_grid_step_east():
    env = GridWorld()
    env.reset()
    s, r, term, trunc = env.step(_grid_action(1))
    assert (s.vector[0], s.vector[1]) == (1.0, 0.0)
    assert r == -1.0 and not term and not trunc


def test_grid_goal_entry_reward_and_termination():
    env = GridWorld()
    env.reset()
    moves = [1, 1, 1, 1, 0, 0, 0, 0]  # E x4 then N x4
    rewards = []
    for a in moves:
        s, r, term, trunc = env.step(_grid_action(a))
        rewards.append(r)
    assert s.discrete_index == GridWorld.cell_index(4, 4)
    assert rewards[:-1] == [-1.0] * 7 and rewards[-1] == 10.0
    assert term and not trunc
    assert sum(rewards) == 3.0


def test_grid_wall_bump_stays_in_place():
    env = GridWorld()
    env.reset()
    s, r, _, _ = env.step(_grid_action(3))  # W off the grid
    assert s.discrete_index == 0 and r == -1.0


def test_grid_truncation_flagged_separately():
    env = GridWorld()
    env.reset()
    for i in range(env.spec.horizon):
        s, r, term, trunc = env.step(_grid_action(3))  # bump W forever
    assert trunc and not term


def test_step_after_done_raises():
    env = GridWorld()
    env.reset()
    for _ in range(env.spec.horizon):
        env.step(_grid_action(3))
    with pytest.raises(RuntimeError):
        env.step(_grid_action(3))


def test_pendulum_reset_seed_determinism():
    env = Pendulum()
    a = env.reset(seed=7).vector
    b = env.reset(seed=7).vector
    assert np.array_equal(a, b)


def test_pendulum_reset_seed_sensitivity():
    env = Pendulum()
    a = env.reset(seed=7).vector
    b = env.reset(seed=8).vector
    assert not np.array_equal(a, b)


def test_pendulum_hanging_equilibrium_is_fixed_point():
    env = Pendulum()
    env.set_state(np.pi, 0.0)
    before = env._state().vector.copy()
    s, _, _, _ = env.step(EnvAction(vector=np.array([0.0])))
    assert np.max(np.abs(s.vector - before)) < 1e-9


def test_pendulum_torque_clipped_to_bounds():
    env = Pendulum()
    env.set_state(1.0, 0.5)
    s_over, r_over, _, _ = env.step(EnvAction(vector=np.array([50.0])))
    env.set_state(1.0, 0.5)
    s_max, r_max, _, _ = env.step(EnvAction(vector=np.array([2.0])))
    assert np.array_equal(s_over.vector, s_max.vector)
    assert r_over == r_max


def test_pendulum_truncates_at_horizon_without_termination():
    env = Pendulum(horizon=5)
    env.reset(seed=0)
    flags = [env.step(EnvAction(vector=np.array([0.0])))[2:] for _ in range(5)]
    assert flags[:-1] == [(False, False)] * 4
    assert flags[-1] == (False, True)


def test_trajectory_replay_is_bitwise_deterministic():
    rng = np.random.default_rng(3)
    actions = rng.uniform(-2, 2, size=(40, 1))

    def rollout():
        env = Pendulum()
        env.reset(seed=11)
        out = []
        for a in actions:
            s, r, _, _ = env.step(EnvAction(vector=a.copy()))
            out.append((s.vector.tobytes(), r))
        return out

    assert rollout() == rollout()


def test_rollout_values_stay_finite():
    rng = np.random.default_rng(0)
    env = Pendulum()
    env.reset(seed=5)
    for _ in range(200):
        s, r, _, trunc = env.step(EnvAction(vector=rng.uniform(-2, 2, 1)))
        assert np.isfinite(s.vector).all() and np.isfinite(r)
        if trunc:
            break


def test_make_env_registry():
    assert isinstance(make_env("gridworld"), GridWorld)
    assert isinstance(make_env("pendulum"), Pendulum)
    with pytest.raises(ValueError):
        make_env("mountaincar")
