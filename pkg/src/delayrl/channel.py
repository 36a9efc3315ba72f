"""Random observation-delay channel.

States generated by the environment travel through the channel and become
observable only after an integer delay drawn per state. The channel keeps
in-flight items in a small heap keyed by arrival time, so every per-step
operation costs O(log k) with k bounded by the maximum delay.
"""

from __future__ import annotations

import heapq
import io
from dataclasses import dataclass, field

import numpy as np

from .envs import EnvState

PMF_SUM_TOL = 1e-12


class DelaySpec:
    """Probability distribution over integer delays with bounded support.

    For ``o_max >= 1`` the support is {1, ..., o_max}: a state is never
    observable in the step it was generated. ``o_max == 0`` is the
    degenerate delay-free channel (every delay is 0), used to recover
    ordinary undelayed interaction from the same code path.
    """

    def __init__(self, o_max: int, pmf):
        pmf = np.asarray(pmf, dtype=float)
        if o_max < 0:
            raise ValueError("o_max must be >= 0")
        if o_max == 0:
            if pmf.shape != (1,) or abs(pmf[0] - 1.0) > PMF_SUM_TOL:
                raise ValueError("delay-free spec must be a point mass on 0")
        else:
            if pmf.shape != (o_max,):
                raise ValueError(f"pmf must have length o_max={o_max}, got {pmf.shape}")
            if np.any(pmf < 0.0):
                raise ValueError("pmf entries must be >= 0")
            if abs(pmf.sum() - 1.0) > PMF_SUM_TOL:
                raise ValueError(f"pmf must sum to 1 within {PMF_SUM_TOL}")
        self.o_max = o_max
        self.pmf = pmf
        self._cdf = np.cumsum(pmf)

    @classmethod
    def uniform(cls, o_max: int) -> "DelaySpec":
        if o_max < 1:
            raise ValueError("uniform spec needs o_max >= 1")
        return cls(o_max, np.full(o_max, 1.0 / o_max))

    @classmethod
    def point(cls, delay: int) -> "DelaySpec":
        if delay == 0:
            return cls(0, [1.0])
        pmf = np.zeros(delay)
        pmf[delay - 1] = 1.0
        return cls(delay, pmf)

    @classmethod
    def from_probs(cls, probs) -> "DelaySpec":
        probs = np.asarray(probs, dtype=float)
        return cls(len(probs), probs)

    def support_min(self) -> int:
        return 0 if self.o_max == 0 else int(np.flatnonzero(self.pmf)[0]) + 1

    def sample(self, rng: np.random.Generator) -> int:
        """One delay by inverse CDF; always consumes exactly one uniform."""
        u = rng.random()
        if self.o_max == 0:
            return 0
        idx = int(np.searchsorted(self._cdf, u, side="right"))
        return min(idx, self.o_max - 1) + 1

    def sample_n(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        if self.o_max == 0:
            return np.zeros(n, dtype=int)
        idx = np.searchsorted(self._cdf, u, side="right")
        return np.minimum(idx, self.o_max - 1) + 1

    def cumulative(self, k: int) -> float:
        """P(delay <= k)."""
        if k < 0:
            raise ValueError("k must be >= 0")
        if self.o_max == 0:
            return 1.0
        if k == 0:
            return 0.0
        return float(self._cdf[min(k, self.o_max) - 1])


def sample_delay(spec: DelaySpec, rng: np.random.Generator) -> int:
    return spec.sample(rng)


def m_probability(spec: DelaySpec, tau_minus_n: int) -> float:
    """Probability that a fresh state is already observable ``tau_minus_n``
    steps after its generation."""
    return spec.cumulative(tau_minus_n)


@dataclass
class TimedState:
    """A state stamped with its generation time and channel delay.

    ``reward_in`` is the reward produced by the transition that created this
    state (None for the initial state); it travels through the channel with
    the state, so the agent learns rewards as late as it learns states.
    """

    state: EnvState
    reward_in: float | None
    gen_time: int
    delay: int
    obs_time: int
    terminal: bool = False
    truncated: bool = False


class SampledDelays:
    """Delay source that draws i.i.d. delays from a DelaySpec."""

    def __init__(self, spec: DelaySpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng

    @property
    def o_max(self) -> int:
        return self.spec.o_max

    def draw(self, gen_time: int) -> int:
        return self.spec.sample(self.rng)


class ScriptedDelays:
    """Delay source replaying a fixed gen_time -> delay table."""

    def __init__(self, delays: dict[int, int]):
        self.delays = dict(delays)
        self.o_max = max(self.delays.values()) if self.delays else 0

    def draw(self, gen_time: int) -> int:
        return self.delays[gen_time]


@dataclass
class EventLog:
    """Flat record of channel events: one (t, kind, gen_time, delay) per line."""

    events: list = field(default_factory=list)
    comments: list = field(default_factory=list)

    def record(self, t: int, kind: str, gen_time: int, delay: int):
        self.events.append((t, kind, gen_time, delay))

    def to_csv(self) -> str:
        out = io.StringIO()
        for c in self.comments:
            out.write(f"# {c}\n")
        out.write("t,kind,gen_time,delay\n")
        for t, kind, gen, delay in self.events:
            out.write(f"{t},{kind},{gen},{delay}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EventLog":
        log = cls()
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                log.comments.append(line.lstrip("# "))
                continue
            if line.startswith("t,"):
                continue
            t, kind, gen, delay = line.split(",")
            if kind not in ("gen", "obs", "use"):
                raise ValueError(f"unknown event kind {kind!r}")
            log.record(int(t), kind, int(gen), int(delay))
        return log


class DelayChannel:
    """Moves generated states to the observable side as time advances.

    The channel only reveals what an agent could legitimately know: callers
    read observed states, never in-flight delays.
    """

    def __init__(self, delays, log: EventLog | None = None):
        self.delays = delays
        self.log = log
        self.reset()

    def reset(self):
        self._in_flight: list = []  # heap of (obs_time, gen_time, TimedState)
        self._observed: dict[int, TimedState] = {}
        self._latest: TimedState | None = None
        self._last_used_gen = 0
        self._last_gen = 0
        self._now = 0
        self.pushed = 0
        self.delivered = 0

    @property
    def now(self) -> int:
        return self._now

    @property
    def in_flight_count(self) -> int:
        return len(self._in_flight)

    @property
    def last_used_gen(self) -> int:
        return self._last_used_gen

    def push(self, state: EnvState, reward_in: float | None, gen_time: int,
             terminal: bool = False, truncated: bool = False) -> TimedState:
        if gen_time != self._last_gen + 1:
            raise ValueError(
                f"generation times must be consecutive: got {gen_time} after {self._last_gen}"
            )
        delay = self.delays.draw(gen_time)
        if delay < 0 or (delay == 0 and getattr(self.delays, "o_max", 1) != 0):
            raise ValueError(f"delay {delay} outside the supported range")
        ts = TimedState(
            state=state,
            reward_in=reward_in,
            gen_time=gen_time,
            delay=delay,
            obs_time=gen_time + delay,
            terminal=terminal,
            truncated=truncated,
        )
        self._last_gen = gen_time
        heapq.heappush(self._in_flight, (ts.obs_time, ts.gen_time, ts))
        self.pushed += 1
        if self.log is not None:
            self.log.record(gen_time, "gen", gen_time, delay)
        return ts

    def advance_to(self, t: int) -> list[TimedState]:
        """Move time forward one step; return newly observable states in
        generation order."""
        if t != self._now + 1:
            raise ValueError(f"advance_to expects t={self._now + 1}, got {t}")
        self._now = t
        arrivals = []
        while self._in_flight and self._in_flight[0][0] <= t:
            _, _, ts = heapq.heappop(self._in_flight)
            self._observed[ts.gen_time] = ts
            arrivals.append(ts)
            self.delivered += 1
            if self.log is not None:
                self.log.record(t, "obs", ts.gen_time, ts.delay)
        for ts in arrivals:  # arrivals pop in (obs, gen) order, so gen ascends
            self._latest = ts
        return arrivals

    def drain(self) -> list[TimedState]:
        """Deliver everything still in flight, advancing one step at a time."""
        out = []
        while self._in_flight:
            out.extend(self.advance_to(self._now + 1))
        return out

    def has_observed(self, gen_time: int) -> bool:
        return gen_time in self._observed

    def observed_by_gen(self, gen_time: int) -> TimedState | None:
        return self._observed.get(gen_time)

    def next_usable_ordered(self) -> TimedState | None:
        """Switch to the next generation if it has arrived, else keep the
        current one. Returns None until the first state is observable."""
        nxt = self._observed.get(self._last_used_gen + 1)
        if nxt is not None:
            self._last_used_gen += 1
            return nxt
        if self._last_used_gen == 0:
            return None
        return self._observed[self._last_used_gen]

    def next_usable_unordered(self) -> TimedState | None:
        """Most recently observed state regardless of generation order;
        simultaneous arrivals resolve to the larger generation index."""
        return self._latest

    def log_use(self, ts: TimedState, t: int):
        if self.log is not None:
            self.log.record(t, "use", ts.gen_time, ts.delay)

    def prune_observed_below(self, gen_time: int):
        """Drop observed entries older than ``gen_time`` (memory bound for
        long runs; anchors never move backwards)."""
        stale = [g for g in self._observed if g < gen_time]
        for g in stale:
            del self._observed[g]
