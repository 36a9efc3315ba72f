"""SAC-style actor-critic for delayed control (BPQL-style critic).

The actor consumes the augmented state (anchor plus action window). The twin
critic deliberately does not: it scores (raw state, action) pairs, so its
input never grows with the delay. Training tuples carry both views, and the
entropy terms are always evaluated on the augmented side. Everything runs in
numpy float64 with hand-written gradients so paired runs match bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import DelaySpec, SampledDelays
from .envs import EnvAction, Pendulum
from .nets import Adam, Mlp
from .scheduler import AugmentedState, DelayedRunner, ReplayTuple, SchedulerMode
from .seeding import make_streams

CHECKPOINT_VERSION = 1
LOG_2PI = float(np.log(2.0 * np.pi))


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


@dataclass
class SacHyper:
    gamma: float = 0.99
    alpha: float = 0.2
    xi: float = 0.995
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    batch_size: int = 128
    capacity: int = 100_000
    hidden: tuple = (64, 64)
    start_learning: int = 1000
    loss_abort: float = 1e6
    # literal form tracks the online net almost fully each step; kept as a
    # switch for comparison, default is the slow-tracking convention
    literal_target_update: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.xi < 1.0:
            raise ValueError("xi must lie in (0, 1)")
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0")


class GaussianActor:
    """Tanh-squashed Gaussian policy over augmented states."""

    LOG_STD_MIN = -5.0
    LOG_STD_MAX = 2.0

    def __init__(self, obs_dim: int, action_low, action_high, hidden=(64, 64),
                 rng: np.random.Generator | None = None):
        action_low = np.asarray(action_low, dtype=float)
        action_high = np.asarray(action_high, dtype=float)
        self.obs_dim = int(obs_dim)
        self.action_dim = action_low.shape[0]
        self.scale = (action_high - action_low) / 2.0
        self.center = (action_high + action_low) / 2.0
        if np.any(self.scale <= 0):
            raise ValueError("action bounds must have positive width")
        self.net = Mlp((obs_dim, *hidden, 2 * self.action_dim), rng)

    def _check_input(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.obs_dim:
            raise ValueError(
                f"actor expects augmented input of width {self.obs_dim}, got {x.shape}"
            )

    def sample_cache(self, x: np.ndarray, eps: np.ndarray):
        """Reparameterized sample: (actions, log-probs, cache for backward)."""
        self._check_input(x)
        out, acts = self.net.forward_cache(x)
        a_dim = self.action_dim
        mu = out[:, :a_dim]
        raw = out[:, a_dim:]
        rho = np.clip(raw, self.LOG_STD_MIN, self.LOG_STD_MAX)
        sigma = np.exp(rho)
        u = mu + sigma * eps
        th = np.tanh(u)
        a = self.scale * th + self.center
        # per-dim: log N(u; mu, sigma) - log|da/du|
        logp_terms = (
            -0.5 * LOG_2PI
            - rho
            - 0.5 * eps**2
            - np.log(self.scale)
            - 2.0 * (np.log(2.0) - u - _softplus(-2.0 * u))
        )
        logp = logp_terms.sum(axis=1)
        cache = (acts, raw, sigma, eps, th)
        return a, logp, cache

    def sample(self, x: np.ndarray, eps: np.ndarray):
        a, logp, _ = self.sample_cache(x, eps)
        return a, logp

    def backward_sample(self, cache, d_a: np.ndarray, d_logp: np.ndarray):
        """Gradients w.r.t. actor parameters, given upstream gradients on the
        sampled actions and on the log-probs (d_logp has shape (batch,))."""
        acts, raw, sigma, eps, th = cache
        d_logp = d_logp[:, None]
        d_u = d_a * self.scale * (1.0 - th**2) + d_logp * 2.0 * th
        d_mu = d_u
        d_rho = d_u * sigma * eps - d_logp
        clip_mask = (raw > self.LOG_STD_MIN) & (raw < self.LOG_STD_MAX)
        d_raw = d_rho * clip_mask
        dout = np.concatenate([d_mu, d_raw], axis=1)
        grads, _ = self.net.backward(acts, dout)
        return grads

    def act(self, x_vec: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal((1, self.action_dim))
        a, _ = self.sample(x_vec[None, :], eps)
        return a[0]

    def mean_action(self, x_vec: np.ndarray) -> np.ndarray:
        out = self.net.forward(x_vec[None, :])
        mu = out[0, : self.action_dim]
        return self.scale * np.tanh(mu) + self.center


class TwinCritic:
    """Two independent Q-heads over (raw state, action) pairs.

    Inputs are checked on every call: this critic must never see action
    histories, only the original state with the action under evaluation.
    """

    def __init__(self, state_dim: int, action_dim: int, hidden=(64, 64),
                 rng: np.random.Generator | None = None):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        in_dim = self.state_dim + self.action_dim
        self.q1 = Mlp((in_dim, *hidden, 1), rng)
        self.q2 = Mlp((in_dim, *hidden, 1), rng)

    def _join(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        if s.ndim != 2 or s.shape[1] != self.state_dim:
            raise ValueError(
                f"critic expects raw states of width {self.state_dim}, got {s.shape}"
            )
        if a.ndim != 2 or a.shape[1] != self.action_dim:
            raise ValueError(
                f"critic expects actions of width {self.action_dim}, got {a.shape}"
            )
        return np.concatenate([s, a], axis=1)

    def values(self, s: np.ndarray, a: np.ndarray):
        x = self._join(s, a)
        return self.q1.forward(x)[:, 0], self.q2.forward(x)[:, 0]

    def min_value(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        q1, q2 = self.values(s, a)
        return np.minimum(q1, q2)

    def clone(self) -> "TwinCritic":
        other = TwinCritic.__new__(TwinCritic)
        other.state_dim = self.state_dim
        other.action_dim = self.action_dim
        other.q1 = self.q1.clone()
        other.q2 = self.q2.clone()
        return other

    def param_list(self) -> list[np.ndarray]:
        return self.q1.param_list() + self.q2.param_list()

    def all_finite(self) -> bool:
        return self.q1.all_finite() and self.q2.all_finite()


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    x: np.ndarray
    x_next: np.ndarray
    done: np.ndarray  # 1.0 only on true termination; truncation stays 0


class ReplayBuffer:
    """Bounded FIFO of flattened transitions with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, obs_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.x = np.zeros((capacity, obs_dim))
        self.x_next = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.pos = 0
        self.size = 0

    def push_tuple(self, tup: ReplayTuple):
        i = self.pos % self.capacity
        self.s[i] = tup.s_now.vector
        self.a[i] = tup.a.vector
        self.r[i] = tup.r
        self.s_next[i] = tup.s_next.vector
        self.x[i] = tup.x_now.flat()
        self.x_next[i] = tup.x_next.flat()
        self.done[i] = 1.0 if tup.done else 0.0
        self.pos += 1
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} < batch {batch_size}")
        idx = rng.integers(self.size, size=batch_size)
        return Batch(
            s=self.s[idx], a=self.a[idx], r=self.r[idx], s_next=self.s_next[idx],
            x=self.x[idx], x_next=self.x_next[idx], done=self.done[idx],
        )


def td_target(batch: Batch, actor, target_critic, hyper: SacHyper,
              eps_next: np.ndarray) -> np.ndarray:
    """Bootstrapped critic target.

    The Q-value bootstraps from the raw next state while the entropy
    correction uses the policy's log-prob at the augmented next state; this
    asymmetry is the whole point of the raw-state critic. Bootstrapping is
    suppressed only on true termination, never on time-limit truncation.
    """
    a_next, logp_next = actor.sample(batch.x_next, eps_next)
    q1, q2 = target_critic.values(batch.s_next, a_next)
    soft_value = np.minimum(q1, q2) - hyper.alpha * logp_next
    return batch.r + hyper.gamma * (1.0 - batch.done) * soft_value


def critic_loss_and_grads(batch: Batch, actor, critic: TwinCritic,
                          target_critic: TwinCritic, hyper: SacHyper,
                          eps_next: np.ndarray):
    """Mean half-squared TD error summed over both heads, with gradients for
    each head's parameters."""
    y = td_target(batch, actor, target_critic, hyper, eps_next)
    joined = critic._join(batch.s, batch.a)
    n = len(y)
    loss = 0.0
    grads = []
    for head in (critic.q1, critic.q2):
        out, acts = head.forward_cache(joined)
        diff = out[:, 0] - y
        loss += 0.5 * float(np.mean(diff**2))
        g, _ = head.backward(acts, (diff / n)[:, None])
        grads.append(g)
    return loss, grads[0], grads[1]


def critic_loss(batch: Batch, actor, critic: TwinCritic, target_critic: TwinCritic,
                hyper: SacHyper, eps_next: np.ndarray) -> float:
    loss, _, _ = critic_loss_and_grads(batch, actor, critic, target_critic, hyper, eps_next)
    return loss


def actor_loss_and_grads(batch: Batch, actor: GaussianActor, critic: TwinCritic,
                         hyper: SacHyper, eps: np.ndarray):
    """Entropy-regularized policy objective and its actor gradients.

    Actions are reparameterized from the actor at the augmented state and
    scored by the smaller critic head at the raw state; gradients flow
    through the sampled action into the actor only.
    """
    a, logp, cache = actor.sample_cache(batch.x, eps)
    joined = critic._join(batch.s, a)
    out1, acts1 = critic.q1.forward_cache(joined)
    out2, acts2 = critic.q2.forward_cache(joined)
    q1, q2 = out1[:, 0], out2[:, 0]
    qmin = np.minimum(q1, q2)
    n = len(qmin)
    loss = float(np.mean(hyper.alpha * logp - qmin))
    pick1 = (q1 <= q2).astype(float)
    _, dx1 = critic.q1.backward(acts1, (-pick1 / n)[:, None])
    _, dx2 = critic.q2.backward(acts2, (-(1.0 - pick1) / n)[:, None])
    d_a = dx1[:, critic.state_dim:] + dx2[:, critic.state_dim:]
    d_logp = np.full(n, hyper.alpha / n)
    grads = actor.backward_sample(cache, d_a, d_logp)
    return loss, grads


def actor_loss(batch: Batch, actor: GaussianActor, critic: TwinCritic,
               hyper: SacHyper, eps: np.ndarray) -> float:
    loss, _ = actor_loss_and_grads(batch, actor, critic, hyper, eps)
    return loss


def soft_update(critic: TwinCritic, target: TwinCritic, xi: float,
                literal: bool = False):
    """Exponential tracking of the online critic by the target critic.

    Default convention keeps the target slow: target <- (1-xi)*online +
    xi*target. The literal flag swaps the roles of the coefficients.
    """
    w_online = xi if literal else (1.0 - xi)
    w_target = 1.0 - w_online
    for p, t in zip(critic.param_list(), target.param_list()):
        t *= w_target
        t += w_online * p


class ActorPolicy:
    """Adapts a GaussianActor to the runner's policy interface."""

    def __init__(self, actor: GaussianActor, rng: np.random.Generator | None = None,
                 deterministic: bool = False):
        if not deterministic and rng is None:
            raise ValueError("stochastic policy needs an rng")
        self.actor = actor
        self.rng = rng
        self.deterministic = deterministic

    def act(self, x: AugmentedState) -> EnvAction:
        vec = x.flat()
        if self.deterministic:
            a = self.actor.mean_action(vec)
        else:
            a = self.actor.act(vec, self.rng)
        return EnvAction(vector=a)


@dataclass
class BpqlResult:
    curve: list  # (cumulative env steps, episode return)
    actor: GaussianActor
    critic: TwinCritic
    target: TwinCritic
    diverged: bool
    steps: int

    def final_mean(self, window: int = 50) -> float:
        returns = [r for _, r in self.curve[-window:]]
        return float(np.mean(returns)) if returns else float("nan")


def train_bpql(mode: SchedulerMode, env=None, hyper: SacHyper | None = None,
               total_steps: int = 100_000, seed: int = 0,
               delay_spec: DelaySpec | None = None, streams=None,
               warmup: str = "zero") -> BpqlResult:
    """Full training loop: delayed interaction, replay collection, and one
    gradient step per environment step applied in a block at episode end
    (once the buffer holds start_learning transitions)."""
    hyper = hyper if hyper is not None else SacHyper()
    if streams is None:
        streams = make_streams(seed)
    if env is None:
        env = Pendulum(rng=streams.env)
    spec = env.spec
    if spec.tabular:
        raise ValueError("train_bpql needs a continuous-action environment")
    if delay_spec is None:
        delay_spec = DelaySpec.uniform(mode.o_max) if mode.o_max >= 1 else DelaySpec.point(0)
    delta = mode.delta
    obs_dim = spec.state_dim + delta * spec.action_dim

    actor = GaussianActor(obs_dim, spec.action_low, spec.action_high,
                          hyper.hidden, streams.init)
    critic = TwinCritic(spec.state_dim, spec.action_dim, hyper.hidden, streams.init)
    target = critic.clone()
    opt_actor = Adam(actor.net.param_list(), hyper.lr_actor)
    opt_q1 = Adam(critic.q1.param_list(), hyper.lr_critic)
    opt_q2 = Adam(critic.q2.param_list(), hyper.lr_critic)
    buffer = ReplayBuffer(hyper.capacity, spec.state_dim, spec.action_dim, obs_dim)
    runner = DelayedRunner(env, mode, SampledDelays(delay_spec, streams.delay),
                           warmup=warmup, explore_rng=streams.explore)
    policy = ActorPolicy(actor, streams.explore)

    curve = []
    steps = 0
    diverged = False
    adim = spec.action_dim
    while steps < total_steps and not diverged:
        result = runner.run_episode(policy, on_tuple=buffer.push_tuple)
        steps += result.steps
        curve.append((steps, result.ep_return))
        if buffer.size < hyper.start_learning:
            continue
        for _ in range(result.steps):
            batch = buffer.sample(hyper.batch_size, streams.explore)
            eps_next = streams.explore.standard_normal((hyper.batch_size, adim))
            closs, g1, g2 = critic_loss_and_grads(batch, actor, critic, target,
                                                  hyper, eps_next)
            opt_q1.step(g1)
            opt_q2.step(g2)
            eps_pi = streams.explore.standard_normal((hyper.batch_size, adim))
            aloss, ga = actor_loss_and_grads(batch, actor, critic, hyper, eps_pi)
            opt_actor.step(ga)
            soft_update(critic, target, hyper.xi, hyper.literal_target_update)
            if (not np.isfinite(closs) or not np.isfinite(aloss)
                    or max(abs(closs), abs(aloss)) > hyper.loss_abort):
                diverged = True
                break
        if not diverged and not (actor.net.all_finite() and critic.all_finite()):
            diverged = True
    return BpqlResult(curve=curve, actor=actor, critic=critic, target=target,
                      diverged=diverged, steps=steps)


def save_checkpoint(path, actor: GaussianActor, critic: TwinCritic,
                    extra: dict | None = None):
    """Parameter dump with shape metadata; plain npz, no pickling."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "obs_dim": actor.obs_dim,
        "action_dim": actor.action_dim,
        "state_dim": critic.state_dim,
        "actor_dims": list(actor.net.dims),
        "critic_dims": list(critic.q1.dims),
        "action_low": (actor.center - actor.scale).tolist(),
        "action_high": (actor.center + actor.scale).tolist(),
    }
    if extra:
        meta["extra"] = extra
    arrays = {"meta": np.array(json.dumps(meta))}
    for i, p in enumerate(actor.net.param_list()):
        arrays[f"actor_{i}"] = p
    for i, p in enumerate(critic.q1.param_list()):
        arrays[f"q1_{i}"] = p
    for i, p in enumerate(critic.q2.param_list()):
        arrays[f"q2_{i}"] = p
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Restore (actor, critic, meta) from a checkpoint file."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        hidden = tuple(meta["actor_dims"][1:-1])
        actor = GaussianActor(meta["obs_dim"], meta["action_low"], meta["action_high"],
                              hidden=hidden)
        hidden_c = tuple(meta["critic_dims"][1:-1])
        critic = TwinCritic(meta["state_dim"], meta["action_dim"], hidden=hidden_c)
        for i in range(len(actor.net.param_list())):
            loaded = data[f"actor_{i}"]
            own = actor.net.param_list()[i]
            if loaded.shape != own.shape:
                raise ValueError("checkpoint shape mismatch in actor parameters")
            own[...] = loaded
        for name, net in (("q1", critic.q1), ("q2", critic.q2)):
            for i in range(len(net.param_list())):
                loaded = data[f"{name}_{i}"]
                own = net.param_list()[i]
                if loaded.shape != own.shape:
                    raise ValueError(f"checkpoint shape mismatch in {name} parameters")
                own[...] = loaded
    return actor, critic, meta
