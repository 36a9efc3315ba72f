"""delayrl: simulation and learning under random observation delays."""

from .channel import (DelayChannel, DelaySpec, EventLog, SampledDelays,
                      ScriptedDelays, TimedState, m_probability, sample_delay)
from .envs import EnvAction, EnvSpec, EnvState, GridWorld, Pendulum, make_env
from .scheduler import (AugmentedState, DelayedRunner, ReplayTuple, SchedulerMode,
                        TemporaryBuffer, build_augmented, conservative_tau,
                        emit_replay)
from .seeding import RngStreams, make_streams

__version__ = "0.1.0"

__all__ = [
    "AugmentedState", "DelayChannel", "DelaySpec", "DelayedRunner", "EnvAction",
    "EnvSpec", "EnvState", "EventLog", "GridWorld", "Pendulum", "ReplayTuple",
    "RngStreams", "SampledDelays", "SchedulerMode", "ScriptedDelays",
    "TemporaryBuffer", "TimedState", "build_augmented", "conservative_tau",
    "emit_replay", "m_probability", "make_env", "make_streams", "sample_delay",
]
