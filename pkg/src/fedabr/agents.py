"""Local deep-RL training: DQN, A2C, and PPO agents over a step/reset env.

Agents hold the state that persists across federated rounds (replay memory,
optimizer moments, target network, exploration step counter); the incoming
round weights are loaded at the start of every local training call. Envs
are duck-typed: `reset() -> obs`, `step(a) -> (obs, reward, done, info)`,
plus an optional `episode_truncated` attribute distinguishing a time-limit
cut (bootstrap the value) from a true terminal state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .abrenv import FeatureScaling, observe
from .manifest import VideoManifest
from .neural import (
    HEAD_LINEAR,
    HEAD_SOFTMAX,
    AdamState,
    Mlp,
    MlpSpec,
    WeightVector,
    adam_step,
    flatten_nets,
    init_mlp,
    load_weights,
    make_adam,
    unflatten_many,
)
from .simcore import LevelChooser, PlayerState

# ------------------------------ configuration ------------------------------


@dataclass(frozen=True)
class DqnConfig:
    lr: float = 5e-4
    batch_size: int = 128
    target_period: int = 25
    gamma: float = 0.9
    exploration_fraction: float = 0.5
    final_epsilon: float = 0.05
    replay_capacity: int = 100_000
    anneal_horizon_steps: int = 100_000
    hidden: tuple[int, ...] = (64, 64)


@dataclass(frozen=True)
class A2cConfig:
    lr: float = 5e-4
    gamma: float = 0.9
    n_steps: int = 5
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    actor_hidden: tuple[int, ...] = (64, 64, 64)
    critic_hidden: tuple[int, ...] = (64, 64)


@dataclass(frozen=True)
class PpoConfig:
    lr: float = 1e-4
    gamma: float = 0.9
    n_steps: int = 5
    clip_epsilon: float = 0.2
    epochs_per_rollout: int = 10
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    actor_hidden: tuple[int, ...] = (64, 64, 64)
    critic_hidden: tuple[int, ...] = (64, 64, 64)


AgentConfig = DqnConfig | A2cConfig | PpoConfig

ALGO_CONFIGS = {"dqn": DqnConfig, "a2c": A2cConfig, "ppo": PpoConfig}


def net_specs(algo: str, obs_dim: int, n_actions: int, config: AgentConfig | None = None) -> list[MlpSpec]:
    """Network layouts exchanged for one client of the given algorithm."""
    if algo == "dqn":
        cfg = config or DqnConfig()
        return [MlpSpec(obs_dim, cfg.hidden, n_actions, HEAD_LINEAR)]
    if algo == "a2c":
        cfg = config or A2cConfig()
    elif algo == "ppo":
        cfg = config or PpoConfig()
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    return [
        MlpSpec(obs_dim, cfg.actor_hidden, n_actions, HEAD_SOFTMAX),
        MlpSpec(obs_dim, cfg.critic_hidden, 1, HEAD_LINEAR),
    ]


@dataclass(frozen=True)
class TrainResult:
    weights: WeightVector
    episode_rewards: list[float]


# ------------------------------ replay memory ------------------------------


class ReplayMemory:
    """Ring buffer of transitions with FIFO eviction; storage grows on demand."""

    def __init__(self, capacity: int, obs_dim: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self._size = 0
        self._next = 0
        self._alloc = 0
        self._s = self._a = self._r = self._s2 = self._term = None

    def __len__(self) -> int:
        return self._size

    def _grow(self) -> None:
        new_alloc = min(self.capacity, max(1024, self._alloc * 2))
        s = np.empty((new_alloc, self.obs_dim))
        a = np.empty(new_alloc, dtype=np.int64)
        r = np.empty(new_alloc)
        s2 = np.empty((new_alloc, self.obs_dim))
        term = np.empty(new_alloc)
        if self._size:
            s[: self._size] = self._s[: self._size]
            a[: self._size] = self._a[: self._size]
            r[: self._size] = self._r[: self._size]
            s2[: self._size] = self._s2[: self._size]
            term[: self._size] = self._term[: self._size]
        self._s, self._a, self._r, self._s2, self._term = s, a, r, s2, term
        self._alloc = new_alloc

    def add(self, s: np.ndarray, a: int, r: float, s2: np.ndarray, terminal: bool) -> None:
        if self._size < self.capacity:
            if self._size == self._alloc:
                self._grow()
            idx = self._size
            self._size += 1
        else:
            idx = self._next
            self._next = (self._next + 1) % self.capacity
        self._s[idx] = s
        self._a[idx] = a
        self._r[idx] = r
        self._s2[idx] = s2
        self._term[idx] = 1.0 if terminal else 0.0

    def sample(self, rng: np.random.Generator, batch_size: int):
        """Uniform sample (with replacement) over the current contents."""
        if self._size == 0:
            raise ValueError("cannot sample from an empty memory")
        idx = rng.integers(0, self._size, size=batch_size)
        return self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._term[idx]


# ------------------------------ loss functions ------------------------------


def td_targets(
    rewards: np.ndarray, next_q_max: np.ndarray, terminal: np.ndarray, gamma: float
) -> np.ndarray:
    """Bootstrap targets r + gamma * max_a' Q(s', a'); terminal transitions keep r."""
    return rewards + gamma * next_q_max * (1.0 - terminal)


def td_loss_and_grad(net: Mlp, states: np.ndarray, actions: np.ndarray, targets: np.ndarray):
    """Mean squared TD error over the batch and its exact parameter gradient."""
    q, cache = net.forward(states, want_cache=True)
    rows = np.arange(len(actions))
    diff = q[rows, actions] - targets
    loss = float(np.mean(diff * diff))
    g = np.zeros_like(q)
    g[rows, actions] = (2.0 / len(actions)) * diff
    return loss, net.backward(cache, g)


def value_loss_and_grad(critic: Mlp, states: np.ndarray, returns: np.ndarray):
    """Summed squared return error for a one-output critic."""
    v, cache = critic.forward(states, want_cache=True)
    diff = v[:, 0] - returns
    loss = float(np.sum(diff * diff))
    return loss, critic.backward(cache, (2.0 * diff)[:, None])


def a2c_actor_loss_and_grad(
    actor: Mlp,
    states: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    entropy_coef: float = 0.0,
):
    """Negated policy-gradient objective -sum(log pi(a|s) * A), advantages constant."""
    p, cache = actor.forward(states, want_cache=True)
    rows = np.arange(len(actions))
    pa = p[rows, actions]
    loss = -float(np.sum(np.log(pa) * advantages))
    g = np.zeros_like(p)
    g[rows, actions] = -advantages / pa
    if entropy_coef:
        logp = np.log(p)
        loss += entropy_coef * float(np.sum(p * logp))
        g += entropy_coef * (logp + 1.0)
    return loss, actor.backward(cache, g)


def ppo_actor_loss_and_grad(
    actor: Mlp,
    states: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    old_probs: np.ndarray,
    clip_epsilon: float,
    entropy_coef: float = 0.0,
):
    """Negated clipped surrogate -sum(min(ratio*A, clip(ratio)*A)).

    Per sample the gradient flows only while the unclipped branch attains
    the min; a saturated clip contributes exactly zero gradient.
    """
    p, cache = actor.forward(states, want_cache=True)
    rows = np.arange(len(actions))
    ratio = p[rows, actions] / old_probs
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    loss = -float(np.sum(np.minimum(unclipped, clipped)))
    g = np.zeros_like(p)
    g[rows, actions] = np.where(unclipped <= clipped, -advantages / old_probs, 0.0)
    if entropy_coef:
        logp = np.log(p)
        loss += entropy_coef * float(np.sum(p * logp))
        g += entropy_coef * (logp + 1.0)
    return loss, actor.backward(cache, g)


def compute_returns(rewards: np.ndarray, gamma: float, bootstrap_value: float) -> np.ndarray:
    """Discounted returns by backward recursion, seeded with the bootstrap."""
    out = np.empty(len(rewards))
    acc = bootstrap_value
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


# ------------------------------ exploration ------------------------------


def epsilon_at(config: DqnConfig, global_step: int) -> float:
    """Linear anneal from 1.0 to the final value over the exploration fraction."""
    cutoff = config.exploration_fraction * config.anneal_horizon_steps
    if cutoff <= 0 or global_step >= cutoff:
        return config.final_epsilon
    frac = global_step / cutoff
    return 1.0 + frac * (config.final_epsilon - 1.0)


def _sample_categorical(p: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    return min(int(np.searchsorted(np.cumsum(p), u)), len(p) - 1)


def _is_truncated(env) -> bool:
    return bool(getattr(env, "episode_truncated", False))


# --------------------------------- agents ---------------------------------


class DqnAgent:
    """Value-based learner: replay memory, target network, epsilon-greedy."""

    algo = "dqn"

    def __init__(self, obs_dim: int, n_actions: int, config: DqnConfig, rng: np.random.Generator) -> None:
        self.config = config
        self.n_actions = n_actions
        self.rng = rng
        (spec,) = net_specs("dqn", obs_dim, n_actions, config)
        self.online = init_mlp(spec, rng)
        self.target = init_mlp(spec, rng)
        self.target.copy_from(self.online)
        self.memory = ReplayMemory(config.replay_capacity, obs_dim)
        self.adam = make_adam(spec.num_params(), config.lr)
        self.step_count = 0

    @property
    def nets(self) -> list[Mlp]:
        return [self.online]

    def train_episodes(self, env, weights_in: WeightVector, episodes: int) -> TrainResult:
        cfg = self.config
        load_weights([self.online], weights_in)
        self.target.copy_from(self.online)  # round-start sync for stable targets
        rewards = []
        for _ in range(episodes):
            obs = env.reset()
            done = False
            total = 0.0
            steps = 0
            while not done:
                if self.rng.random() < epsilon_at(cfg, self.step_count):
                    action = int(self.rng.integers(self.n_actions))
                else:
                    action = int(np.argmax(self.online.forward(obs)))
                obs2, r, done, _ = env.step(action)
                terminal = done and not _is_truncated(env)
                self.memory.add(obs, action, r, obs2, terminal)
                self.step_count += 1
                if len(self.memory) >= cfg.batch_size:
                    self._gradient_step()
                if self.step_count % cfg.target_period == 0:
                    self.target.copy_from(self.online)
                obs = obs2
                total += r
                steps += 1
            rewards.append(total / steps)
        return TrainResult(weights=flatten_nets([self.online]), episode_rewards=rewards)

    def _gradient_step(self) -> None:
        cfg = self.config
        s, a, r, s2, term = self.memory.sample(self.rng, cfg.batch_size)
        q_next = self.target.forward(s2)
        targets = td_targets(r, q_next.max(axis=1), term, cfg.gamma)
        _, grad = td_loss_and_grad(self.online, s, a, targets)
        adam_step(self.adam, self.online.flat, grad)


@dataclass(frozen=True)
class Rollout:
    """Up-to-N consecutive steps of one episode plus derived learning targets."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    action_probs: np.ndarray
    values: np.ndarray
    bootstrap_value: float
    returns: np.ndarray
    advantages: np.ndarray


class _ActorCriticBase:
    def __init__(self, obs_dim: int, n_actions: int, config, rng: np.random.Generator) -> None:
        self.config = config
        self.n_actions = n_actions
        self.rng = rng
        actor_spec, critic_spec = net_specs(self.algo, obs_dim, n_actions, config)
        self.actor = init_mlp(actor_spec, rng)
        self.critic = init_mlp(critic_spec, rng)
        self.adam_actor = make_adam(actor_spec.num_params(), config.lr)
        self.adam_critic = make_adam(critic_spec.num_params(), config.lr)

    @property
    def nets(self) -> list[Mlp]:
        return [self.actor, self.critic]

    def train_episodes(self, env, weights_in: WeightVector, episodes: int) -> TrainResult:
        load_weights(self.nets, weights_in)
        rewards = []
        for _ in range(episodes):
            obs = env.reset()
            done = False
            total = 0.0
            steps = 0
            while not done:
                rollout, obs, done = self._collect(env, obs)
                self._update(rollout)
                total += float(rollout.rewards.sum())
                steps += len(rollout.rewards)
            rewards.append(total / steps)
        return TrainResult(weights=flatten_nets(self.nets), episode_rewards=rewards)

    def _collect(self, env, obs: np.ndarray):
        """Roll the current policy for up to n_steps, cutting at episode end."""
        cfg = self.config
        states, actions, rewards, probs, values = [], [], [], [], []
        done = False
        truncated = False
        for _ in range(cfg.n_steps):
            p = self.actor.forward(obs)
            a = _sample_categorical(p, self.rng)
            v = float(self.critic.forward(obs)[0])
            obs2, r, done, _ = env.step(a)
            states.append(obs)
            actions.append(a)
            rewards.append(r)
            probs.append(float(p[a]))
            values.append(v)
            obs = obs2
            if done:
                truncated = _is_truncated(env)
                break
        if done and not truncated:
            bootstrap = 0.0
        else:
            bootstrap = float(self.critic.forward(obs)[0])
        rewards_arr = np.asarray(rewards)
        values_arr = np.asarray(values)
        returns = compute_returns(rewards_arr, cfg.gamma, bootstrap)
        rollout = Rollout(
            states=np.asarray(states),
            actions=np.asarray(actions, dtype=np.int64),
            rewards=rewards_arr,
            action_probs=np.asarray(probs),
            values=values_arr,
            bootstrap_value=bootstrap,
            returns=returns,
            advantages=returns - values_arr,
        )
        return rollout, obs, done


class A2cAgent(_ActorCriticBase):
    """Synchronous advantage actor-critic with N-step returns."""

    algo = "a2c"

    def _update(self, rollout: Rollout) -> None:
        cfg = self.config
        _, g_critic = value_loss_and_grad(self.critic, rollout.states, rollout.returns)
        adam_step(self.adam_critic, self.critic.flat, cfg.value_coef * g_critic)
        _, g_actor = a2c_actor_loss_and_grad(
            self.actor, rollout.states, rollout.actions, rollout.advantages, cfg.entropy_coef
        )
        adam_step(self.adam_actor, self.actor.flat, g_actor)


class PpoAgent(_ActorCriticBase):
    """Clipped-surrogate actor-critic; several optimization epochs per rollout."""

    algo = "ppo"

    def _update(self, rollout: Rollout) -> None:
        cfg = self.config
        old_probs = rollout.action_probs  # pi_old frozen at collection time
        for _ in range(cfg.epochs_per_rollout):
            _, g_actor = ppo_actor_loss_and_grad(
                self.actor,
                rollout.states,
                rollout.actions,
                rollout.advantages,
                old_probs,
                cfg.clip_epsilon,
                cfg.entropy_coef,
            )
            adam_step(self.adam_actor, self.actor.flat, g_actor)
            _, g_critic = value_loss_and_grad(self.critic, rollout.states, rollout.returns)
            adam_step(self.adam_critic, self.critic.flat, cfg.value_coef * g_critic)


def make_agent(algo: str, obs_dim: int, n_actions: int, config: AgentConfig | None, rng: np.random.Generator):
    if algo == "dqn":
        return DqnAgent(obs_dim, n_actions, config or DqnConfig(), rng)
    if algo == "a2c":
        return A2cAgent(obs_dim, n_actions, config or A2cConfig(), rng)
    if algo == "ppo":
        return PpoAgent(obs_dim, n_actions, config or PpoConfig(), rng)
    raise ValueError(f"unknown algorithm {algo!r}")


# ------------------------------ greedy policies ------------------------------


def greedy_policy(
    weights: WeightVector,
    specs: list[MlpSpec],
    scaling: FeatureScaling,
) -> LevelChooser:
    """Deterministic level-chooser: argmax of the decision network's output.

    Works for value and policy networks alike (softmax preserves the argmax
    of the logits); ties break toward the lowest level index. The decision
    network is the first layout in `specs`.
    """
    nets = unflatten_many(specs, weights)
    net = nets[0]

    def choose(state: PlayerState, manifest: VideoManifest) -> int:
        return int(np.argmax(net.forward(observe(state, manifest, scaling))))

    return choose
