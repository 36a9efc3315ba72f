"""Decision-time scheduling over the delay channel.

The scheduler decides which observed state anchors each decision, builds the
policy input (anchor state plus a fixed window of recent actions) and emits
training tuples once everything they reference has arrived.

Variants:
  conservative    every state is used exactly o_max steps after generation,
                  which makes a random-delay channel indistinguishable from
                  a constant-delay one
  ordered         use states in generation order as soon as possible, at
                  most one new state per step
  unordered       always use the most recently observed state, ignoring
                  generation order
  quantile_cutoff conservative with a smaller pseudo-maximum o_pmax; when
                  the wanted state has not arrived, reuse the last used one
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .channel import DelayChannel, TimedState
from .envs import EnvAction, EnvState

VARIANTS = ("conservative", "ordered", "unordered", "quantile_cutoff")


def conservative_tau(n: int, o_max: int) -> int:
    """Time step at which the state generated at ``n`` gets used under the
    conservative rule: always ``n + o_max``."""
    if n <= 0:
        raise ValueError("generation index must be positive")
    if o_max < 1:
        raise ValueError("o_max must be >= 1")
    return n + o_max


@dataclass
class SchedulerMode:
    variant: str
    o_max: int
    o_pmax: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; known: {VARIANTS}")
        if self.o_max < 0:
            raise ValueError("o_max must be >= 0")
        if self.variant == "quantile_cutoff":
            if self.o_pmax is None:
                raise ValueError("quantile_cutoff needs o_pmax")
            if not 0 < self.o_pmax < self.o_max:
                raise ValueError("o_pmax must satisfy 0 < o_pmax < o_max")

    @property
    def delta(self) -> int:
        """Length of the action window in the augmented state."""
        return self.o_pmax if self.variant == "quantile_cutoff" else self.o_max


@dataclass
class AugmentedState:
    """Anchor state plus the window of actions taken since (oldest first).

    Flattened layout is fixed: (anchor vector, oldest action, ..., newest
    action), giving a constant width of state_dim + delta * action_dim.
    """

    base: EnvState
    actions: tuple
    _flat: np.ndarray | None = field(default=None, repr=False, compare=False)

    def flat(self) -> np.ndarray:
        if self._flat is None:
            parts = [self.base.vector] + [a.vector for a in self.actions]
            self._flat = np.concatenate(parts) if len(parts) > 1 else self.base.vector.copy()
        return self._flat


def build_augmented(anchor: EnvState, history, delta: int) -> AugmentedState:
    history = tuple(history)
    if len(history) != delta:
        raise ValueError(f"action history must have length {delta}, got {len(history)}")
    return AugmentedState(base=anchor, actions=history)


@dataclass
class ReplayTuple:
    """One training transition, indexed by the hidden current state.

    ``r`` is the reward of taking ``a`` in ``s_now``; ``done`` marks true
    termination of ``s_next`` while ``truncated`` marks a time limit, so
    learners can bootstrap through truncation.
    """

    x_now: AugmentedState
    s_now: EnvState
    a: EnvAction
    r: float
    x_next: AugmentedState
    s_next: EnvState
    done: bool = False
    truncated: bool = False


class _Entry:
    __slots__ = ("state", "action", "reward", "xhat", "terminal", "truncated")

    def __init__(self):
        self.state = None
        self.action = None
        self.reward = None
        self.xhat = None
        self.terminal = False
        self.truncated = False


class TemporaryBuffer:
    """Sliding window of recent generations, filled as information arrives.

    An entry for generation n accumulates: the state (once observed), the
    action taken at decision step n, the reward of that action (which
    travels with state n+1) and the augmented state the agent actually used
    at step n. Entries pop strictly in generation order.
    """

    def __init__(self):
        self._entries: dict[int, _Entry] = {}
        self._last_popped = 0

    def reset(self):
        self._entries.clear()
        self._last_popped = 0

    def __len__(self):
        return len(self._entries)

    def _entry(self, n: int) -> _Entry:
        e = self._entries.get(n)
        if e is None:
            e = _Entry()
            self._entries[n] = e
        return e

    def note_arrival(self, ts: TimedState):
        if ts.gen_time > self._last_popped:
            e = self._entry(ts.gen_time)
            e.state = ts.state
            e.terminal = ts.terminal
            e.truncated = ts.truncated
        if ts.reward_in is not None and ts.gen_time - 1 > self._last_popped:
            self._entry(ts.gen_time - 1).reward = ts.reward_in

    def note_decision(self, t: int, action: EnvAction | None, xhat: AugmentedState | None):
        e = self._entry(t)
        e.action = action
        e.xhat = xhat

    def get(self, n: int) -> _Entry | None:
        return self._entries.get(n)

    def pop(self, n: int):
        if n <= self._last_popped:
            raise ValueError(f"generation {n} already popped")
        self._last_popped = n
        self._entries.pop(n, None)


def emit_replay(buf: TemporaryBuffer, t: int, o_max: int,
                strict: bool = True) -> ReplayTuple | None:
    """Emit the transition anchored ``o_max`` steps back, once its pieces
    have all arrived; nothing before t > 2*o_max.

    The entry that slides out of the window (generation t - 2*o_max) is
    popped. Returns None when no tuple is due. With delays bounded by the
    window length every piece is guaranteed present, so a missing one is a
    hard fault; ``strict=False`` (cutoff scheduling, where states may lag
    past the window) silently drops the incomplete transition instead.
    """
    if t <= 2 * o_max:
        return None
    m = t - o_max
    e_now = buf.get(m)
    e_next = buf.get(m + 1)
    if e_now is None or e_next is None:
        raise RuntimeError(f"buffer window missing generations {m}/{m + 1} at t={t}")
    x_next = e_next.xhat
    if x_next is None and o_max == 0:
        # delay-free: the next decision has not happened yet, but its input
        # is just the raw next state
        x_next = AugmentedState(base=e_next.state, actions=())
    tup = None
    if e_now.xhat is not None and x_next is not None:
        pieces = (e_now.state, e_now.action, e_now.reward, e_next.state)
        if all(p is not None for p in pieces):
            tup = ReplayTuple(
                x_now=e_now.xhat,
                s_now=e_now.state,
                a=e_now.action,
                r=e_now.reward,
                x_next=x_next,
                s_next=e_next.state,
                done=e_next.terminal,
                truncated=e_next.truncated,
            )
        elif strict:
            raise RuntimeError(f"buffer entry for generation {m} incomplete at t={t}")
    if t - 2 * o_max > 0:
        buf.pop(t - 2 * o_max)
    return tup


class ConservativeAnchors:
    """Anchor at generation t - o_max, warming up for the first o_max steps."""

    def __init__(self, o_max: int):
        self.o_max = o_max

    def reset(self):
        pass

    def select(self, channel: DelayChannel, t: int) -> TimedState | None:
        if t <= self.o_max:
            return None
        ts = channel.observed_by_gen(t - self.o_max)
        if ts is None:
            raise RuntimeError(
                f"state generated at {t - self.o_max} not observed by t={t}; "
                "delays exceeded the declared maximum"
            )
        return ts


class OrderedAnchors:
    """Consume states in generation order, at most one new state per step."""

    def reset(self):
        pass

    def select(self, channel: DelayChannel, t: int) -> TimedState | None:
        return channel.next_usable_ordered()


class UnorderedAnchors:
    """Always use the freshest observation, ignoring generation order."""

    def reset(self):
        pass

    def select(self, channel: DelayChannel, t: int) -> TimedState | None:
        return channel.next_usable_unordered()


class StaleReuseAnchors:
    """Conservative at a reduced horizon o_pmax; reuse the last used state
    whenever the wanted one has not arrived yet."""

    def __init__(self, o_pmax: int):
        self.o_pmax = o_pmax
        self.last: TimedState | None = None

    def reset(self):
        self.last = None

    def select(self, channel: DelayChannel, t: int) -> TimedState | None:
        if t <= self.o_pmax:
            return None
        ts = channel.observed_by_gen(t - self.o_pmax)
        if ts is not None:
            self.last = ts
            return ts
        return self.last


def make_anchor_rule(mode: SchedulerMode):
    if mode.variant == "conservative":
        return ConservativeAnchors(mode.o_max)
    if mode.variant == "ordered":
        return OrderedAnchors()
    if mode.variant == "unordered":
        return UnorderedAnchors()
    return StaleReuseAnchors(mode.o_pmax)


def zero_action(spec) -> EnvAction:
    """The designated idle action: index 0 for discrete tasks, the zero
    vector (clipped into bounds) for continuous ones."""
    if spec.tabular:
        return EnvAction(vector=np.array([0.0]), discrete_index=0)
    vec = np.clip(np.zeros(spec.action_dim), spec.action_low, spec.action_high)
    return EnvAction(vector=vec)


def window_actions(history, noop: EnvAction, delta: int, age: int) -> tuple:
    """Action window matching an anchor that is ``age`` steps old.

    The window holds the actions taken since the anchor was generated,
    left-padded with the idle action to the fixed length ``delta``. An
    anchor older than the window (possible only when generation order is
    ignored or a cutoff reuses stale states) saturates to the newest
    ``delta`` actions.
    """
    if delta == 0:
        return ()
    k = min(age, delta)
    recent = tuple(history)[delta - k:] if k > 0 else ()
    if k == delta:
        return recent
    return (noop,) * (delta - k) + recent


@dataclass
class StepRecord:
    """One decision step of a transcript, for exact cross-run comparison."""

    t: int
    anchor_gen: int  # -1 while warming up
    xhat: np.ndarray | None
    action: np.ndarray
    reward: float


@dataclass
class EpisodeResult:
    ep_return: float
    steps: int
    tuples: int
    terminated: bool
    truncated: bool


class DelayedRunner:
    """Drives one environment through the delay channel under a mode.

    Per decision step t: pick an anchor (or warm up), act, let the
    environment respond, feed the response into the channel, advance time,
    and emit any training tuple that is now fully known. On true
    termination the channel is drained and the remaining tail tuples are
    emitted so terminal rewards reach learners.
    """

    def __init__(self, env, mode: SchedulerMode, delay_source,
                 warmup: str = "zero", explore_rng: np.random.Generator | None = None,
                 event_log=None):
        if warmup not in ("zero", "random"):
            raise ValueError("warmup must be 'zero' or 'random'")
        if warmup == "random" and explore_rng is None:
            raise ValueError("random warmup needs an exploration rng")
        self.env = env
        self.mode = mode
        self.channel = DelayChannel(delay_source, log=event_log)
        self.buffer = TemporaryBuffer()
        self.rule = make_anchor_rule(mode)
        self.warmup = warmup
        self.explore_rng = explore_rng
        self._noop = zero_action(env.spec)
        # cutoff scheduling may legitimately miss late states; everything
        # else treats an incomplete emission window as a bug
        self._strict_emit = mode.variant != "quantile_cutoff"

    def _warmup_action(self) -> EnvAction:
        if self.warmup == "zero":
            return self._noop
        spec = self.env.spec
        if spec.tabular:
            idx = int(self.explore_rng.integers(spec.n_actions))
            return EnvAction(vector=np.array([float(idx)]), discrete_index=idx)
        vec = self.explore_rng.uniform(spec.action_low, spec.action_high)
        return EnvAction(vector=vec)

    def run_episode(self, policy, on_tuple=None, transcript: list | None = None) -> EpisodeResult:
        env, mode = self.env, self.mode
        delta = mode.delta
        self.channel.reset()
        self.buffer.reset()
        self.rule.reset()

        s0 = env.reset()
        self.channel.push(s0, None, gen_time=1)
        for ts in self.channel.advance_to(1):
            self.buffer.note_arrival(ts)

        history = deque([self._noop] * delta, maxlen=delta) if delta > 0 else None
        ep_return = 0.0
        tuples = 0
        t = 0
        terminated = truncated = False
        while True:
            t += 1
            anchor = self.rule.select(self.channel, t)
            if anchor is None:
                action = self._warmup_action()
                xhat = None
            else:
                acts = window_actions(history, self._noop, delta, t - anchor.gen_time)
                xhat = build_augmented(anchor.state, acts, delta)
                action = policy.act(xhat)
                self.channel.log_use(anchor, t)
            self.buffer.note_decision(t, action, xhat)

            s_next, reward, term, trunc = env.step(action)
            ep_return += reward
            self.channel.push(s_next, reward, gen_time=t + 1, terminal=term, truncated=trunc)
            for ts in self.channel.advance_to(t + 1):
                self.buffer.note_arrival(ts)
            if history is not None:
                history.append(action)

            if transcript is not None:
                transcript.append(StepRecord(
                    t=t,
                    anchor_gen=anchor.gen_time if anchor is not None else -1,
                    xhat=xhat.flat().copy() if xhat is not None else None,
                    action=action.vector.copy(),
                    reward=reward,
                ))

            tup = emit_replay(self.buffer, t, delta, strict=self._strict_emit)
            if tup is not None:
                tuples += 1
                if on_tuple is not None:
                    on_tuple(tup)

            if term or trunc:
                terminated, truncated = term, trunc
                if term:
                    tuples += self._flush_terminal(t, history, on_tuple)
                break
        return EpisodeResult(ep_return, t, tuples, terminated, truncated)

    def _flush_terminal(self, t_last: int, history, on_tuple) -> int:
        """After true termination, deliver in-flight states and emit the tail
        tuples that the regular loop would have produced over the next
        ``delta`` steps."""
        delta = self.mode.delta
        if delta == 0:
            return 0
        for ts in self.channel.drain():
            self.buffer.note_arrival(ts)
        virtual_t = t_last + 1
        anchor = self.rule.select(self.channel, virtual_t)
        if anchor is not None:
            acts = window_actions(history, self._noop, delta, virtual_t - anchor.gen_time)
            xhat = build_augmented(anchor.state, acts, delta)
            self.buffer.note_decision(virtual_t, None, xhat)
        else:
            self.buffer.note_decision(virtual_t, None, None)
        emitted = 0
        for td in range(t_last + 1, t_last + 1 + delta):
            tup = emit_replay(self.buffer, td, delta, strict=self._strict_emit)
            if tup is not None:
                emitted += 1
                if on_tuple is not None:
                    on_tuple(tup)
        return emitted
