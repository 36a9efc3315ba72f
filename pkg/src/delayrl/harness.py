"""Experiment orchestration: configs, seeded runs, metrics and checks.

Everything here is deterministic per (config, seed): CSV outputs are
byte-identical across repeated invocations on one machine. Wall-clock
timings live only in the JSON summary.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from .bpql import ActorPolicy, GaussianActor, SacHyper, load_checkpoint, train_bpql
from .channel import (DelayChannel, DelaySpec, EventLog, SampledDelays,
                      ScriptedDelays)
from .envs import EnvAction, EnvState, make_env
from .scheduler import (AugmentedState, DelayedRunner, SchedulerMode,
                        make_anchor_rule, zero_action)
from .seeding import make_streams
from .tabular import train_tabular

CURVE_SCHEMA = "delayrl curves v1"
AVG_WINDOW = 20  # trailing episodes averaged for the step-indexed curves

LEARNERS = ("tabular", "bpql", "random", "none")
DELAY_KINDS = ("uniform", "point")


# ---------------------------------------------------------------------------
# policies usable by any runner

class ZeroPolicy:
    """Always the idle action; consumes no randomness."""

    def __init__(self, env_spec):
        self._action = zero_action(env_spec)

    def act(self, x: AugmentedState) -> EnvAction:
        return self._action


class RandomPolicy:
    """Uniform over the action space; one draw per decision."""

    def __init__(self, env_spec, rng: np.random.Generator):
        self.spec = env_spec
        self.rng = rng

    def act(self, x: AugmentedState) -> EnvAction:
        if self.spec.tabular:
            idx = int(self.rng.integers(self.spec.n_actions))
            return EnvAction(vector=np.array([float(idx)]), discrete_index=idx)
        vec = self.rng.uniform(self.spec.action_low, self.spec.action_high)
        return EnvAction(vector=vec)


class AdaptedActorPolicy:
    """Runs a trained actor on augmented states of any window length.

    The actor keeps its native input width: the adapter feeds it the anchor
    plus the newest actions it was trained with, padding with the idle
    action when the window is shorter. Still a fixed function of the
    augmented state, so paired-run comparisons remain valid.
    """

    def __init__(self, actor: GaussianActor, env_spec, rng: np.random.Generator):
        self.actor = actor
        self.rng = rng
        adim = env_spec.action_dim
        self.native_window = (actor.obs_dim - env_spec.state_dim) // adim
        self._pad = zero_action(env_spec)

    def act(self, x: AugmentedState) -> EnvAction:
        k = self.native_window
        acts = x.actions[-k:] if k > 0 else ()
        if len(acts) < k:
            acts = (self._pad,) * (k - len(acts)) + tuple(acts)
        parts = [x.base.vector] + [a.vector for a in acts]
        vec = np.concatenate(parts) if len(parts) > 1 else x.base.vector
        return EnvAction(vector=self.actor.act(vec, self.rng))


def build_policy(policy_spec, env_spec, rng: np.random.Generator):
    """policy_spec: 'zero' | 'random' | 'actor:<checkpoint path>'."""
    if policy_spec == "zero":
        return ZeroPolicy(env_spec)
    if policy_spec == "random":
        return RandomPolicy(env_spec, rng)
    if isinstance(policy_spec, str) and policy_spec.startswith("actor:"):
        actor, _, _ = load_checkpoint(policy_spec.split(":", 1)[1])
        return AdaptedActorPolicy(actor, env_spec, rng)
    if isinstance(policy_spec, GaussianActor):
        return AdaptedActorPolicy(policy_spec, env_spec, rng)
    raise ValueError(f"unknown policy spec {policy_spec!r}")


# ---------------------------------------------------------------------------
# config

@dataclass
class RunConfig:
    env: str = "gridworld"
    env_params: dict = field(default_factory=dict)
    mode: str = "conservative"
    o_max: int = 1
    o_pmax: int | None = None
    delay: object = "uniform"  # "uniform" | "point" | explicit pmf list over {1..o_max}
    learner: str = "tabular"
    seeds: list = field(default_factory=lambda: [0])
    episodes: int = 200
    total_steps: int = 20_000
    hyper: dict = field(default_factory=dict)
    out_dir: str = "results"
    final_window: int = 50
    workers: int = 1
    warmup: str = "zero"

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.learner not in LEARNERS:
            raise ValueError(f"learner must be one of {LEARNERS}, got {self.learner!r}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        self.scheduler_mode()  # raises on bad mode/o_max/o_pmax
        self.delay_spec()  # raises on bad pmf

    def scheduler_mode(self) -> SchedulerMode:
        return SchedulerMode(self.mode, self.o_max, self.o_pmax)

    def delay_spec(self) -> DelaySpec:
        if self.delay == "uniform":
            return DelaySpec.uniform(self.o_max) if self.o_max >= 1 else DelaySpec.point(0)
        if self.delay == "point":
            return DelaySpec.point(self.o_max)
        spec = DelaySpec.from_probs(self.delay)
        if spec.o_max != self.o_max:
            raise ValueError(
                f"explicit pmf covers delays 1..{spec.o_max} but o_max={self.o_max}"
            )
        return spec

    def sac_hyper(self) -> SacHyper:
        known = set(SacHyper.__dataclass_fields__)
        kwargs = {k: v for k, v in self.hyper.items() if k in known}
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        return SacHyper(**kwargs)


# ---------------------------------------------------------------------------
# run orchestration

def _rollout_policy(config: RunConfig, seed: int, kind: str):
    streams = make_streams(seed)
    env = make_env(config.env, streams.env, **config.env_params)
    mode = config.scheduler_mode()
    runner = DelayedRunner(env, mode, SampledDelays(config.delay_spec(), streams.delay),
                           warmup=config.warmup, explore_rng=streams.explore)
    policy = ZeroPolicy(env.spec) if kind == "none" else RandomPolicy(env.spec, streams.explore)
    curve = []
    steps = 0
    for ep in range(config.episodes):
        result = runner.run_episode(policy)
        steps += result.steps
        curve.append((steps, result.ep_return))
    return curve, False


def run_one_seed(config_dict: dict, seed: int) -> dict:
    """One (config, seed) training run; plain dict in/out so worker pools
    can ship it between processes."""
    config = RunConfig.from_dict(config_dict)
    mode = config.scheduler_mode()
    t0 = time.perf_counter()
    diverged = False
    if config.learner == "tabular":
        tab_kwargs = {k: config.hyper[k] for k in ("lr", "eps_start", "eps_final")
                      if k in config.hyper}
        streams = make_streams(seed)
        env = make_env(config.env, streams.env, **config.env_params)
        res = train_tabular(mode, config.episodes, seed, config.delay_spec(),
                            env=env, streams=streams, **tab_kwargs)
        curve = list(enumerate(res.returns))
    elif config.learner == "bpql":
        streams = make_streams(seed)
        env = make_env(config.env, streams.env, **config.env_params)
        res = train_bpql(mode, env=env, hyper=config.sac_hyper(),
                         total_steps=config.total_steps, seed=seed,
                         delay_spec=config.delay_spec(), streams=streams,
                         warmup=config.warmup)
        curve = res.curve
        diverged = res.diverged
    else:
        curve, diverged = _rollout_policy(config, seed, config.learner)
    returns = [r for _, r in curve]
    window = returns[-config.final_window:]
    return {
        "seed": seed,
        "curve": curve,
        "final_mean": float(np.mean(window)) if window else float("nan"),
        "diverged": diverged,
        "wall_clock_s": time.perf_counter() - t0,
    }


@dataclass
class RunResult:
    per_seed: list
    mean: float
    std: float | None
    curves_path: str
    summary_path: str


def _episode_rows(config: RunConfig, seed: int, curve) -> list[str]:
    rows = []
    if config.learner == "bpql":
        returns = [r for _, r in curve]
        for i, (step, _) in enumerate(curve):
            avg = float(np.mean(returns[max(0, i + 1 - AVG_WINDOW): i + 1]))
            rows.append(f"{step},{avg!r},{config.mode},{config.o_max},{seed}")
    else:
        for episode, (_, ret) in enumerate(curve):
            rows.append(f"{episode},{ret!r},{config.mode},{config.o_max},{seed}")
    return rows


def run(config: RunConfig) -> RunResult:
    """Execute every seed, write the long-format curve CSV and a JSON
    summary, and return the aggregate result."""
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    config_dict = asdict(config)
    t0 = time.perf_counter()
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(run_one_seed, config_dict, s) for s in config.seeds]
            results = [f.result() for f in futures]
    else:
        results = [run_one_seed(config_dict, s) for s in config.seeds]
    total_wall = time.perf_counter() - t0

    header = "step,avg_return" if config.learner == "bpql" else "episode,return"
    lines = [f"# {CURVE_SCHEMA}", f"{header},mode,o_max,seed"]
    for res in results:
        lines.extend(_episode_rows(config, res["seed"], res["curve"]))
    curves_path = os.path.join(config.out_dir, "curves.csv")
    with open(curves_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    finals = [r["final_mean"] for r in results]
    mean = float(np.mean(finals))
    std = float(np.std(finals)) if len(finals) >= 2 else None
    summary = {
        "config": config_dict,
        "per_seed": [
            {"seed": r["seed"], "final_mean": r["final_mean"], "diverged": r["diverged"]}
            for r in results
        ],
        "final_mean": mean,
        "final_std": std,
        "std_flagged": len(finals) < 2,
        "wall_clock_s": {
            "total": total_wall,
            "per_seed": [r["wall_clock_s"] for r in results],
        },
    }
    summary_path = os.path.join(config.out_dir, "summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
    return RunResult(per_seed=results, mean=mean, std=std,
                     curves_path=curves_path, summary_path=summary_path)


# ---------------------------------------------------------------------------
# metrics

def normalized_score(r_alg: float, r_random: float, r_free: float) -> float:
    """Score of 0 at random-policy level and 1 at delay-free level."""
    denom = r_free - r_random
    if denom == 0.0:
        raise ValueError("delay-free and random returns coincide; score undefined")
    return (r_alg - r_random) / denom


# ---------------------------------------------------------------------------
# exact-equivalence check between random and constant delays

def _transcript(env_name: str, env_params: dict, mode: SchedulerMode,
                delay_spec: DelaySpec, policy_spec, steps: int, seed: int,
                warmup: str = "zero") -> list:
    streams = make_streams(seed)
    env = make_env(env_name, streams.env, **env_params)
    runner = DelayedRunner(env, mode, SampledDelays(delay_spec, streams.delay),
                           warmup=warmup, explore_rng=streams.explore)
    policy = build_policy(policy_spec, env.spec, streams.explore)
    records: list = []
    while len(records) < steps:
        runner.run_episode(policy, transcript=records)
    return records[:steps]


def _records_differ(a, b) -> str | None:
    if a.anchor_gen != b.anchor_gen:
        return "anchor"
    if (a.xhat is None) != (b.xhat is None):
        return "augmented_state"
    if a.xhat is not None and not np.array_equal(a.xhat, b.xhat):
        return "augmented_state"
    if not np.array_equal(a.action, b.action):
        return "action"
    if a.reward != b.reward:
        return "reward"
    return None


def equivalence_check(env_name: str, policy_spec, o_max: int, delay_spec: DelaySpec,
                      steps: int, seed: int, variant: str = "conservative",
                      env_params: dict | None = None) -> dict:
    """Compare a run on random delays against the ordered run on a constant
    delay o_max, sharing every random stream.

    Under the conservative variant the two must match exactly, step by step,
    in augmented states, actions and rewards.
    """
    env_params = env_params or {}
    if delay_spec.o_max > o_max:
        return {
            "status": "precondition_violation",
            "detail": f"delay support reaches {delay_spec.o_max} > o_max={o_max}",
        }
    rec_random = _transcript(env_name, env_params, SchedulerMode(variant, o_max),
                             delay_spec, policy_spec, steps, seed)
    rec_const = _transcript(env_name, env_params, SchedulerMode("ordered", o_max),
                            DelaySpec.point(o_max), policy_spec, steps, seed)
    for i, (a, b) in enumerate(zip(rec_random, rec_const)):
        fieldname = _records_differ(a, b)
        if fieldname is not None:
            return {
                "status": "diverged",
                "first_divergence": {"index": i, "t": a.t, "field": fieldname},
                "steps": steps,
            }
    return {"status": "identical", "steps": steps}


# ---------------------------------------------------------------------------
# runtime overhead benchmark

def _timed_rollout(env_name: str, mode: SchedulerMode, delay_spec: DelaySpec,
                   steps: int, seed: int) -> float:
    streams = make_streams(seed)
    env = make_env(env_name, streams.env)
    runner = DelayedRunner(env, mode, SampledDelays(delay_spec, streams.delay))
    policy = ZeroPolicy(env.spec)
    done = 0
    t0 = time.perf_counter()
    while done < steps:
        done += runner.run_episode(policy).steps
    return time.perf_counter() - t0


def bench_overhead(env_name: str = "gridworld", o_max: int = 20,
                   steps: int = 1_000_000, reps: int = 3, seed: int = 0) -> dict:
    """Wall clock of scheduler-driven interaction, learner disabled:
    random delays under the conservative rule vs a constant delay under the
    ordered rule. Best of ``reps`` on each side."""
    if steps <= 0:
        return {"steps": 0, "conservative_s": 0.0, "constant_s": 0.0, "ratio": None}
    random_side = min(
        _timed_rollout(env_name, SchedulerMode("conservative", o_max),
                       DelaySpec.uniform(o_max), steps, seed)
        for _ in range(reps)
    )
    constant_side = min(
        _timed_rollout(env_name, SchedulerMode("ordered", o_max),
                       DelaySpec.point(o_max), steps, seed)
        for _ in range(reps)
    )
    return {
        "steps": steps,
        "o_max": o_max,
        "conservative_s": random_side,
        "constant_s": constant_side,
        "ratio": random_side / constant_side,
        "per_step_us": {
            "conservative": 1e6 * random_side / steps,
            "constant": 1e6 * constant_side / steps,
        },
    }


def bench_scaling(env_name: str = "gridworld", o_maxes=(16, 32),
                  steps: int = 300_000, reps: int = 3, seed: int = 0) -> dict:
    """Per-step cost of the conservative scheduler at increasing o_max."""
    per_step = {}
    for o_max in o_maxes:
        best = min(
            _timed_rollout(env_name, SchedulerMode("conservative", o_max),
                           DelaySpec.uniform(o_max), steps, seed)
            for _ in range(reps)
        )
        per_step[int(o_max)] = 1e6 * best / steps
    return {"steps": steps, "per_step_us": per_step}


# ---------------------------------------------------------------------------
# golden traces

# Hand-checkable reference schedules. The ordered trace follows generation
# order with at most one new state per step; the conservative trace uses
# every state exactly o_max=3 steps after generation even though two pairs
# of observations arrive simultaneously and one out of order.
ORDERED_REFERENCE_TRACE = """\
# mode=ordered
# o_max=3
t,kind,gen_time,delay
1,gen,1,2
2,gen,2,3
3,gen,3,1
3,obs,1,2
3,use,1,2
4,obs,3,1
4,use,1,2
5,obs,2,3
5,use,2,3
6,use,3,1
"""

CONSERVATIVE_REFERENCE_TRACE = """\
# mode=conservative
# o_max=3
# note: the source schedule contains one zero delay (generation 6); it is
# remapped to the minimum supported delay 1, which leaves every use time
# unchanged
t,kind,gen_time,delay
1,gen,1,2
2,gen,2,1
3,gen,3,2
3,obs,1,2
3,obs,2,1
4,gen,4,3
4,use,1,2
5,gen,5,1
5,obs,3,2
5,use,2,1
6,gen,6,1
6,obs,5,1
6,use,3,2
7,gen,7,3
7,obs,4,3
7,obs,6,1
7,use,4,3
8,use,5,1
9,use,6,1
10,obs,7,3
10,use,7,3
"""

REFERENCE_TRACES = {
    "ordered": ORDERED_REFERENCE_TRACE,
    "conservative": CONSERVATIVE_REFERENCE_TRACE,
}


def _trace_header(log: EventLog) -> dict:
    header = {}
    for comment in log.comments:
        if "=" in comment and " " not in comment.split("=", 1)[0]:
            key, value = comment.split("=", 1)
            header[key.strip()] = value.strip()
    return header


def replay_schedule(delays: dict, variant: str, o_max: int, t_max: int) -> EventLog:
    """Re-run the channel and anchor rule over a fixed delay table and log
    every gen/obs/use event up to time t_max."""
    log = EventLog()
    channel = DelayChannel(ScriptedDelays(delays), log=log)
    rule = make_anchor_rule(SchedulerMode(variant, o_max))
    n_gen = max(delays) if delays else 0
    for t in range(1, t_max + 1):
        if t <= n_gen:
            channel.push(EnvState(vector=np.array([float(t)])), None, gen_time=t)
        channel.advance_to(t)
        ts = rule.select(channel, t)
        if ts is not None:
            channel.log_use(ts, t)
    return log


def golden_trace(source: str) -> dict:
    """Replay the delay realization recorded in a trace and verify that the
    produced schedule matches the trace event for event.

    ``source`` is CSV text with `# key=value` header comments providing
    ``mode`` and ``o_max``. Empty traces pass vacuously.
    """
    expected = EventLog.from_csv(source)
    if not expected.events:
        return {"status": "pass", "events": 0}
    header = _trace_header(expected)
    variant = header.get("mode", "ordered")
    o_max = int(header.get("o_max", 1))
    delays = {gen: delay for t, kind, gen, delay in expected.events if kind == "gen"}
    t_max = max(t for t, _, _, _ in expected.events)
    produced = replay_schedule(delays, variant, o_max, t_max)
    for i, (want, got) in enumerate(zip(expected.events, produced.events)):
        if want != got:
            return {
                "status": "fail",
                "first_mismatch": {"index": i, "expected": want, "produced": got},
            }
    if len(expected.events) != len(produced.events):
        return {
            "status": "fail",
            "first_mismatch": {
                "index": min(len(expected.events), len(produced.events)),
                "expected_total": len(expected.events),
                "produced_total": len(produced.events),
            },
        }
    return {"status": "pass", "events": len(expected.events)}


def first_use_times(log: EventLog) -> dict:
    first = {}
    for t, kind, gen, _ in log.events:
        if kind == "use" and gen not in first:
            first[gen] = t
    return first
