"""Per-LB soft actor-critic agent.

Each load balancer owns one agent: observation assembly from its local view,
a ring replay buffer, an actor/critic pair with slowly-tracking guiding
copies, and automatic entropy-temperature tuning.  At every step boundary
the agent observes, stores a transition, optionally performs one gradient
update, samples a fresh action, and maps it to per-server speed weights for
the dispatch rule; between boundaries the weights stay frozen while ongoing
counts move per dispatch.

The value target follows the stated critic gradient: y = r + gamma *
(Q_guiding(s', a') - alpha * log pi(a'|s')) with a' freshly sampled from the
current actor.  The guiding actor is instantiated and soft-updated but not
used in the target unless explicitly configured.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metrics, nets
from .policies import Policy, rlb_assign

LB_FEATURES = 5
SERVER_FEATURES = 11          # duration stats (5) + TCT stats (5) + ongoing count
SERVER_FEATURES_STRICT = 6    # TCT stats (5) + ongoing count
SPEED_FLOOR = 0.05

# The actor's log-std output is squashed into this range by default.  A
# single critic (no twin-Q) overestimates value in rarely-visited action
# regions, which rewards noise harvesting and inflates sigma without a
# bound; the speed weights live in (0.05, 1.05), so noise above ~0.5 is
# never useful.
ACTOR_LOG_STD_LO = -3.0
ACTOR_LOG_STD_HI = -0.7


@dataclass
class SacConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 3000
    gamma: float = 0.99
    tau: float = 0.005
    hidden: int = 64
    updates_per_step: int = 1
    log_alpha_init: float = math.log(0.2)
    log_std_init: float = 0.0          # initial bias of the log-std head output
    log_std_bounds: tuple = (ACTOR_LOG_STD_LO, ACTOR_LOG_STD_HI)
    alpha_learning_rate: Optional[float] = None  # None: same as learning_rate
    actor_weight_decay: float = 0.0
    target_entropy: Optional[float] = None   # default: -(number of servers)
    include_duration: bool = True
    reward_index: str = "jain"
    reward_literal: bool = False
    value_target_uses_guiding_actor: bool = False


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class Batch:
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return self.state.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring with uniform seeded sampling and FIFO eviction."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int,
                 rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.state = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, act_dim))
        self.reward = np.zeros(capacity)
        self.next_state = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self._idx = 0
        self.size = 0

    def push(self, transition: Transition) -> None:
        i = self._idx
        self.state[i] = transition.state
        self.action[i] = transition.action
        self.reward[i] = transition.reward
        self.next_state[i] = transition.next_state
        self.done[i] = 1.0 if transition.done else 0.0
        self._idx = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:
        idx = self.rng.integers(0, self.size, size=batch_size)
        return Batch(
            state=self.state[idx].copy(),
            action=self.action[idx].copy(),
            reward=self.reward[idx].copy(),
            next_state=self.next_state[idx].copy(),
            done=self.done[idx].copy(),
        )


def observe(view, now: float, include_duration: bool = True):
    """Assemble the observation vector and the per-server discounted TCTs.

    Layout: LB inter-arrival stats (5), then per server the duration stats
    (5, unless strict observability), TCT stats (5) and the local ongoing
    count (1).  Channels with no samples reduce to zeros.
    """
    parts = [view.interarrival.stats(now).as_array()]
    w_tilde = np.empty(view.n)
    for j in range(view.n):
        if include_duration:
            parts.append(view.durations[j].stats(now).as_array())
        tct = view.tcts[j].stats(now)
        parts.append(tct.as_array())
        parts.append(np.array([float(view.ongoing[j])]))
        w_tilde[j] = tct.discounted_average
    return np.concatenate(parts), w_tilde


def build_observation(view, now: float, include_duration: bool = True) -> np.ndarray:
    return observe(view, now, include_duration)[0]


def action_to_speeds(a: np.ndarray) -> np.ndarray:
    """Map a squashed action in (-1,1)^n to positive speed weights.

    s_j = (a_j + 1)/2 + 0.05: strictly positive, monotone and
    order-preserving, so relative action ranking carries into the dispatch
    rule unchanged.
    """
    return (np.asarray(a, dtype=float) + 1.0) / 2.0 + SPEED_FLOOR


class ObservationNormalizer:
    """Streaming standardization with per-server channels pooled.

    The LB block keeps per-feature statistics; the per-server block pools
    statistics across servers per channel.  Pooling is what preserves the
    between-server signal: with per-position statistics a persistently slower
    server normalizes to the same distribution as a fast one, and the shared
    per-server encoder loses the asymmetry it must act on.
    """

    def __init__(self, n_servers: int, srv_dim: int):
        self.n = n_servers
        self.srv_dim = srv_dim
        self.lb_norm = nets.InputNormalizer(LB_FEATURES)
        self.srv_norm = nets.InputNormalizer(srv_dim)

    def update(self, obs: np.ndarray) -> None:
        self.lb_norm.update(obs[:LB_FEATURES])
        rows = obs[LB_FEATURES:].reshape(self.n, self.srv_dim)
        for row in rows:
            self.srv_norm.update(row)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        flat = obs.ndim == 1
        batch = obs[None, :] if flat else obs
        lb = self.lb_norm.normalize(batch[:, :LB_FEATURES])
        rows = batch[:, LB_FEATURES:].reshape(-1, self.srv_dim)
        srv = self.srv_norm.normalize(rows).reshape(batch.shape[0], -1)
        out = np.concatenate([lb, srv], axis=1)
        return out[0] if flat else out

    def state(self) -> dict:
        return {"lb": self.lb_norm.state(), "server": self.srv_norm.state()}

    def load_state(self, state: dict) -> None:
        self.lb_norm = nets.InputNormalizer.from_state(state["lb"])
        self.srv_norm = nets.InputNormalizer.from_state(state["server"])


class ActorNet:
    """Shared per-server encoder + LB encoder + shared per-server Gaussian head.

    The server encoder and head weights are shared across servers (the
    server axis is folded into the batch axis), so gradients accumulate over
    all servers.
    """

    def __init__(self, n_servers: int, lb_dim: int, srv_dim: int, hidden: int,
                 rng: np.random.Generator, head_out: int = 2, action_input: bool = False,
                 log_std_bounds: tuple = (ACTOR_LOG_STD_LO, ACTOR_LOG_STD_HI)):
        self.n = n_servers
        self.lb_dim = lb_dim
        self.srv_dim = srv_dim
        self.hidden = hidden
        self.action_input = action_input
        self.log_std_bounds = log_std_bounds
        head_in = 2 * hidden + (1 if action_input else 0)
        self.lb_enc = nets.DenseNet.build([lb_dim, hidden, hidden], rng)
        self.srv_enc = nets.DenseNet.build([srv_dim, hidden, hidden], rng)
        self.head = nets.DenseNet.build([head_in, hidden, hidden, head_out], rng)
        self._batch = 0

    def params(self) -> list:
        return self.lb_enc.params() + self.srv_enc.params() + self.head.params()

    def _embed(self, obs: np.ndarray, action: Optional[np.ndarray]) -> np.ndarray:
        B = obs.shape[0]
        x_lb = obs[:, :self.lb_dim]
        x_srv = obs[:, self.lb_dim:].reshape(B * self.n, self.srv_dim)
        e_lb = self.lb_enc.forward(x_lb)
        e_srv = self.srv_enc.forward(x_srv)
        tiled = np.repeat(e_lb, self.n, axis=0)
        cols = [tiled, e_srv]
        if action is not None:
            cols.append(action.reshape(B * self.n, 1))
        self._batch = B
        return np.concatenate(cols, axis=1)

    def _unwind(self, d_head_in: np.ndarray):
        h = self.hidden
        B = self._batch
        d_lb = d_head_in[:, :h].reshape(B, self.n, h).sum(axis=1)
        d_srv = d_head_in[:, h:2 * h]
        _, g_srv = self.srv_enc.backward(d_srv)
        _, g_lb = self.lb_enc.backward(d_lb)
        return g_lb + g_srv

    def forward(self, obs: np.ndarray):
        """Per-server Gaussian parameters: (mean, bounded log_std), each (B, n).

        The raw log-std column is tanh-squashed into
        [ACTOR_LOG_STD_LO, ACTOR_LOG_STD_HI].
        """
        out = self.head.forward(self._embed(obs, None))
        B = self._batch
        mean = out[:, 0].reshape(B, self.n)
        squashed = np.tanh(out[:, 1].reshape(B, self.n))
        self._ls_squash = squashed
        lo, hi = self.log_std_bounds
        log_std = lo + 0.5 * (hi - lo) * (squashed + 1.0)
        return mean, log_std

    def backward(self, d_mean: np.ndarray, d_log_std: np.ndarray) -> list:
        B = self._batch
        lo, hi = self.log_std_bounds
        d_raw = d_log_std * 0.5 * (hi - lo) * (1.0 - self._ls_squash * self._ls_squash)
        d_out = np.empty((B * self.n, 2))
        d_out[:, 0] = d_mean.reshape(-1)
        d_out[:, 1] = d_raw.reshape(-1)
        d_head_in, g_head = self.head.backward(d_out)
        return self._unwind(d_head_in) + g_head

    def copy(self) -> "ActorNet":
        dup = object.__new__(ActorNet)
        dup.n, dup.lb_dim, dup.srv_dim = self.n, self.lb_dim, self.srv_dim
        dup.hidden, dup.action_input = self.hidden, self.action_input
        dup.log_std_bounds = self.log_std_bounds
        dup.lb_enc = self.lb_enc.copy()
        dup.srv_enc = self.srv_enc.copy()
        dup.head = self.head.copy()
        dup._batch = 0
        return dup


class CriticNet(ActorNet):
    """Same encoders plus the per-server action as input; outputs scalar Q.

    Per-server head contributions are summed over servers, which keeps the
    parameter count independent of n and the value consistent under the
    shared-encoder structure.
    """

    def __init__(self, n_servers: int, lb_dim: int, srv_dim: int, hidden: int,
                 rng: np.random.Generator):
        super().__init__(n_servers, lb_dim, srv_dim, hidden, rng,
                         head_out=1, action_input=True)

    def forward(self, obs: np.ndarray, action: np.ndarray):
        out = self.head.forward(self._embed(obs, action))
        return out.reshape(self._batch, self.n).sum(axis=1)

    def backward(self, d_q: np.ndarray):
        """Returns (parameter gradients, gradient w.r.t. the action input)."""
        d_out = np.repeat(np.asarray(d_q, dtype=float), self.n)[:, None]
        d_head_in, g_head = self.head.backward(d_out)
        d_action = d_head_in[:, -1].reshape(self._batch, self.n)
        return self._unwind(d_head_in[:, :-1]) + g_head, d_action

    def copy(self) -> "CriticNet":
        dup = object.__new__(CriticNet)
        dup.n, dup.lb_dim, dup.srv_dim = self.n, self.lb_dim, self.srv_dim
        dup.hidden, dup.action_input = self.hidden, self.action_input
        dup.log_std_bounds = self.log_std_bounds
        dup.lb_enc = self.lb_enc.copy()
        dup.srv_enc = self.srv_enc.copy()
        dup.head = self.head.copy()
        dup._batch = 0
        return dup


class SacModel:
    """Actor, critic, their guiding (slow) copies, and the entropy temperature."""

    def __init__(self, n_servers: int, srv_dim: int, hidden: int,
                 rng: np.random.Generator, log_alpha_init: float,
                 log_std_init: float = 0.0,
                 log_std_bounds: tuple = (ACTOR_LOG_STD_LO, ACTOR_LOG_STD_HI)):
        self.actor = ActorNet(n_servers, LB_FEATURES, srv_dim, hidden, rng,
                              log_std_bounds=log_std_bounds)
        self.critic = CriticNet(n_servers, LB_FEATURES, srv_dim, hidden, rng)
        # Small policy-head init: the policy starts as a near-constant
        # function of the observation and earns its reactivity through
        # training.  A randomly-initialized head reacts to every noisy
        # feature from step one, and that reactivity feeds the dispatch loop
        # (counts -> action -> counts) as oscillation.
        self.actor.head.layers[-1].w *= 0.01
        # the head's second output column is the log-std; biasing it sets the
        # starting exploration scale
        self.actor.head.layers[-1].b[1] = log_std_init
        self.guiding_actor = self.actor.copy()
        self.guiding_critic = self.critic.copy()
        self.log_alpha = np.array([log_alpha_init])

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))


class SacAgent:
    """One learning load balancer: local observations in, speed weights out."""

    def __init__(self, n_servers: int, config: SacConfig, seed: int, lb_id: int = 0):
        self.n = n_servers
        self.config = config
        self.lb_id = lb_id
        init_rng, self.noise_rng, replay_rng = (
            np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, lb_id, k)))
            for k in range(3))
        srv_dim = SERVER_FEATURES if config.include_duration else SERVER_FEATURES_STRICT
        self.obs_dim = LB_FEATURES + srv_dim * n_servers
        self.model = SacModel(n_servers, srv_dim, config.hidden, init_rng,
                              config.log_alpha_init, config.log_std_init,
                              config.log_std_bounds)
        self.normalizer = ObservationNormalizer(n_servers, srv_dim)
        self.buffer = ReplayBuffer(config.buffer_capacity, self.obs_dim, n_servers,
                                   replay_rng)
        lr = config.learning_rate
        self.actor_opt = nets.Adam(self.model.actor.params(), lr=lr,
                                   weight_decay=config.actor_weight_decay)
        self.critic_opt = nets.Adam(self.model.critic.params(), lr=lr)
        alpha_lr = config.alpha_learning_rate if config.alpha_learning_rate else lr
        self.alpha_opt = nets.Adam([self.model.log_alpha], lr=alpha_lr)
        self.target_entropy = (config.target_entropy if config.target_entropy is not None
                               else -float(n_servers))
        self.prev_obs: Optional[np.ndarray] = None
        self.prev_action: Optional[np.ndarray] = None
        self.training = True
        self.total_steps = 0
        self.total_updates = 0
        self.dump_dir: Optional[str] = None

    @property
    def alpha(self) -> float:
        return self.model.alpha

    # -- environment interface -------------------------------------------

    def step(self, view, now: float):
        """Step-boundary hook: observe, store, train, refresh the action.

        Returns (reward, per-server speed weights).  The first boundary of
        an episode stores no transition; training starts once the buffer
        holds a full batch.
        """
        obs, w_tilde = observe(view, now, self.config.include_duration)
        self.normalizer.update(obs)
        reward = metrics.reward(w_tilde, self.config.reward_index,
                                self.config.reward_literal)
        if self.prev_obs is not None:
            self.buffer.push(Transition(self.prev_obs, self.prev_action, reward,
                                        obs, False))
        if self.buffer.size >= self.config.batch_size:
            for _ in range(self.config.updates_per_step):
                self.train_step()
        action = self._act(obs)
        self.prev_obs = obs
        self.prev_action = action
        self.total_steps += 1
        return reward, action_to_speeds(action).tolist()

    def episode_end(self, view, now: float) -> float:
        """Close the episode: store the terminal transition (done=True)."""
        obs, w_tilde = observe(view, now, self.config.include_duration)
        self.normalizer.update(obs)
        reward = metrics.reward(w_tilde, self.config.reward_index,
                                self.config.reward_literal)
        if self.prev_obs is not None:
            self.buffer.push(Transition(self.prev_obs, self.prev_action, reward,
                                        obs, True))
        self.prev_obs = None
        self.prev_action = None
        return reward

    def _act(self, obs: np.ndarray) -> np.ndarray:
        mean, log_std = self.model.actor.forward(self.normalizer.normalize(obs)[None, :])
        if self.training:
            noise = self.noise_rng.standard_normal(self.n)
            action, _ = nets.gaussian_head_sample(mean[0], log_std[0], noise)
            return action
        return np.tanh(mean[0])

    # -- gradient updates --------------------------------------------------

    def train_step(self) -> None:
        batch = self.buffer.sample(self.config.batch_size)
        try:
            self.critic_update(batch)
            self.actor_update(batch)
            self.alpha_update(batch)
        except nets.DivergenceError:
            if self.dump_dir is not None:
                self.save_checkpoint(os.path.join(self.dump_dir, "diverged"))
            raise
        self.soft_update()
        self.total_updates += 1

    def critic_targets(self, batch: Batch, noise: Optional[np.ndarray] = None) -> np.ndarray:
        """Bootstrapped targets y = r + gamma*(1-done)*(Q~(s',a') - alpha*logpi)."""
        if noise is None:
            noise = self.noise_rng.standard_normal((len(batch), self.n))
        s2 = self.normalizer.normalize(batch.next_state)
        source = (self.model.guiding_actor
                  if self.config.value_target_uses_guiding_actor else self.model.actor)
        mean2, log_std2 = source.forward(s2)
        a2, logp2 = nets.gaussian_head_sample(mean2, log_std2, noise)
        q_next = self.model.guiding_critic.forward(s2, a2)
        return batch.reward + self.config.gamma * (1.0 - batch.done) * (
            q_next - self.alpha * logp2)

    def critic_loss_grads(self, batch: Batch, targets: np.ndarray):
        """Squared-error loss against frozen targets and its critic gradients."""
        q = self.model.critic.forward(self.normalizer.normalize(batch.state), batch.action)
        err = q - targets
        loss = float(np.mean(err * err))
        grads, _ = self.model.critic.backward(2.0 * err / len(batch))
        return loss, grads

    def critic_update(self, batch: Batch, noise: Optional[np.ndarray] = None,
                      apply: bool = True) -> float:
        """One squared-error step of the critic toward the frozen targets."""
        y = self.critic_targets(batch, noise)
        loss, grads = self.critic_loss_grads(batch, y)
        if apply:
            self.critic_opt.step(grads)
        return loss

    def actor_loss_grads(self, batch: Batch, noise: np.ndarray):
        """Loss mean(alpha*logpi - Q) under frozen noise, with actor gradients.

        Gradients flow through the reparameterized sample into the actor;
        the critic only contributes its action-input gradient.
        """
        s = self.normalizer.normalize(batch.state)
        mean, log_std_raw = self.model.actor.forward(s)
        a, logp, da_dm, da_dls, dlp_dm, dlp_dls = nets.gaussian_head_grads(
            mean, log_std_raw, noise)
        q = self.model.critic.forward(s, a)
        alpha = self.alpha
        B = len(batch)
        loss = float(np.mean(alpha * logp - q))
        _, d_action = self.model.critic.backward(np.full(B, -1.0 / B))
        d_mean = (alpha / B) * dlp_dm + d_action * da_dm
        d_ls = (alpha / B) * dlp_dls + d_action * da_dls
        return loss, self.model.actor.backward(d_mean, d_ls)

    def actor_update(self, batch: Batch, noise: Optional[np.ndarray] = None,
                     apply: bool = True) -> float:
        """Reparameterized policy step minimizing alpha*logpi - Q."""
        if noise is None:
            noise = self.noise_rng.standard_normal((len(batch), self.n))
        loss, grads = self.actor_loss_grads(batch, noise)
        if apply:
            self.actor_opt.step(grads)
        return loss

    def alpha_update(self, batch: Batch, noise: Optional[np.ndarray] = None,
                     apply: bool = True) -> float:
        """Tune the temperature toward the target entropy; returns new alpha."""
        if noise is None:
            noise = self.noise_rng.standard_normal((len(batch), self.n))
        mean, log_std = self.model.actor.forward(self.normalizer.normalize(batch.state))
        _, logp = nets.gaussian_head_sample(mean, log_std, noise)
        grad = -float(np.mean(logp + self.target_entropy))
        if apply:
            self.alpha_opt.step([np.array([grad])])
        return self.alpha

    def soft_update(self) -> None:
        """Guiding copies track the mains: g <- (1-tau) g + tau main."""
        tau = self.config.tau
        for guiding, main in ((self.model.guiding_actor, self.model.actor),
                              (self.model.guiding_critic, self.model.critic)):
            for dst, src in zip(guiding.params(), main.params()):
                dst *= 1.0 - tau
                dst += tau * src

    # -- persistence --------------------------------------------------------

    def save_checkpoint(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        named = {"actor": self.model.actor, "critic": self.model.critic,
                 "guiding_actor": self.model.guiding_actor,
                 "guiding_critic": self.model.guiding_critic}
        for name, net in named.items():
            for part, dense in (("lb", net.lb_enc), ("server", net.srv_enc),
                                ("head", net.head)):
                nets.save_net(os.path.join(directory, f"{name}.{part}.nn"), dense)
        manifest = {
            "n_servers": self.n,
            "obs_dim": self.obs_dim,
            "include_duration": self.config.include_duration,
            "hidden": self.config.hidden,
            "log_alpha": float(self.model.log_alpha[0]),
            "total_steps": self.total_steps,
            "total_updates": self.total_updates,
            "normalizer": self.normalizer.state(),
        }
        with open(os.path.join(directory, "agent.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    def load_checkpoint(self, directory: str) -> None:
        with open(os.path.join(directory, "agent.json")) as fh:
            manifest = json.load(fh)
        if manifest["obs_dim"] != self.obs_dim or manifest["n_servers"] != self.n:
            raise ValueError("checkpoint shape does not match this agent")
        named = {"actor": self.model.actor, "critic": self.model.critic,
                 "guiding_actor": self.model.guiding_actor,
                 "guiding_critic": self.model.guiding_critic}
        for name, net in named.items():
            for part, attr in (("lb", "lb_enc"), ("server", "srv_enc"), ("head", "head")):
                setattr(net, attr, nets.load_net(os.path.join(directory, f"{name}.{part}.nn")))
        self.model.log_alpha[0] = manifest["log_alpha"]
        self.total_steps = manifest["total_steps"]
        self.total_updates = manifest["total_updates"]
        self.normalizer.load_state(manifest["normalizer"])
        self.actor_opt = nets.Adam(self.model.actor.params(), lr=self.config.learning_rate)
        self.critic_opt = nets.Adam(self.model.critic.params(), lr=self.config.learning_rate)
        self.alpha_opt = nets.Adam([self.model.log_alpha], lr=self.config.learning_rate)


class SacPolicy(Policy):
    """Engine-facing adapter around a SacAgent."""

    name = "rlb-sac"
    wants_observations = True
    trains = True

    def __init__(self, agent: SacAgent, tie_break: str = "random"):
        super().__init__(tie_break)
        self.agent = agent

    def initial_weights(self, topology) -> list:
        # Midpoint speed for every server until the t=0 boundary installs
        # the first sampled action.
        return [0.5 + SPEED_FLOOR] * topology.n_servers

    def select(self, ctx) -> int:
        return rlb_assign(ctx, self.tie_break)

    def on_step(self, view, now: float):
        return self.agent.step(view, now)

    def on_episode_end(self, view, now: float) -> None:
        self.agent.episode_end(view, now)
