"""From-scratch policy network, replay buffer, and DQN trainer.

The policy is a fully connected net (input -> 400 -> 300 -> num actions,
ReLU hidden layers, linear output) implemented directly in numpy, trained
with plain SGD on the squared TD error with gradient-norm clipping.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DqnConfig:
    learning_rate: float = 1e-4
    discount: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10_000
    replay_capacity: int = 50_000
    batch_size: int = 64
    target_sync_period: int = 500
    normalizer_warmup: int = 1_000
    hidden_sizes: tuple[int, int] = (400, 300)
    grad_clip: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must be in [0, 1)")
        if self.replay_capacity < self.batch_size:
            raise ValueError("replay capacity must be >= batch size")


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

@dataclass
class MlpParams:
    """Weights and biases, layer i maps sizes[i] -> sizes[i+1]."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights])


def mlp_init(obs_dim: int, num_actions: int, hidden: tuple[int, ...],
             rng: np.random.Generator) -> MlpParams:
    sizes = (obs_dim, *hidden, num_actions)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(2.0 / n_in)  # He init for ReLU
        weights.append(rng.normal(0.0, scale, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(weights, biases)


def mlp_forward(params: MlpParams, obs: np.ndarray) -> np.ndarray:
    """Q-values for one observation or a batch (rows)."""
    x = np.asarray(obs, dtype=float)
    if x.shape[-1] != params.weights[0].shape[1]:
        raise ValueError(f"observation dim {x.shape[-1]} does not match network "
                         f"input {params.weights[0].shape[1]}")
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        x = np.maximum(x @ w.T + b, 0.0)
    return x @ params.weights[-1].T + params.biases[-1]


def mlp_gradient(params: MlpParams, obs: np.ndarray, actions: np.ndarray,
                 targets: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Loss and parameter gradients of the mean squared TD error.

    Loss = mean over the batch of (Q(o, a) - target)^2, differentiated only
    through the selected action's output.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    n = obs.shape[0]
    acts = [obs]
    x = obs
    pre = []
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = x @ w.T + b
        pre.append(z)
        x = np.maximum(z, 0.0)
        acts.append(x)
    q = x @ params.weights[-1].T + params.biases[-1]

    q_sel = q[np.arange(n), actions]
    err = q_sel - np.asarray(targets, dtype=float)
    loss = float(np.mean(err ** 2))

    dq = np.zeros_like(q)
    dq[np.arange(n), actions] = 2.0 * err / n

    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    delta = dq
    for layer in range(len(params.weights) - 1, -1, -1):
        grads_w[layer] = delta.T @ acts[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (pre[layer - 1] > 0.0)
    return loss, grads_w, grads_b


def sgd_step(params: MlpParams, grads_w, grads_b, lr: float, clip: float) -> None:
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads_w)
                   + sum(float(np.sum(g * g)) for g in grads_b))
    scale = lr if norm <= clip else lr * clip / norm
    for w, gw in zip(params.weights, grads_w):
        w -= scale * gw
    for b, gb in zip(params.biases, grads_b):
        b -= scale * gb


# ---------------------------------------------------------------------------
# Replay buffer and normalizer
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """FIFO ring buffer with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=int)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, obs, action, reward, next_obs, done) -> None:
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self._size, size=batch_size)
        return (self.obs[idx], self.actions[idx], self.rewards[idx],
                self.next_obs[idx], self.dones[idx])


class ObservationNormalizer:
    """Running mean/variance standardization, frozen after a warmup count."""

    def __init__(self, dim: int, warmup: int):
        self.mean = np.zeros(dim)
        self._m2 = np.ones(dim)
        self.count = 0
        self.warmup = warmup

    @property
    def frozen(self) -> bool:
        return self.count >= self.warmup

    def update(self, obs: np.ndarray) -> None:
        if self.frozen:
            return
        self.count += 1
        delta = obs - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (obs - self.mean)

    @property
    def std(self) -> np.ndarray:
        var = self._m2 / max(self.count, 1)
        return np.sqrt(np.maximum(var, 1e-8))

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return (obs - self.mean) / self.std


# ---------------------------------------------------------------------------
# Agent
# ---------------------------------------------------------------------------

def select_action(q: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy branch breaks ties toward the lowest index."""
    if rng.random() < eps:
        return int(rng.integers(0, len(q)))
    return int(np.argmax(q))


def dqn_update(params: MlpParams, target_params: MlpParams, batch,
               cfg: DqnConfig) -> float:
    """One TD(0) step: y = r + gamma * max_a' Q_target(o', a') * (1 - done)."""
    obs, actions, rewards, next_obs, dones = batch
    q_next = mlp_forward(target_params, next_obs)
    targets = rewards + cfg.discount * q_next.max(axis=1) * (1.0 - dones)
    loss, gw, gb = mlp_gradient(params, obs, actions, targets)
    sgd_step(params, gw, gb, cfg.learning_rate, cfg.grad_clip)
    return loss


@dataclass
class DqnAgent:
    params: MlpParams
    target_params: MlpParams
    normalizer: ObservationNormalizer
    cfg: DqnConfig
    total_steps: int = 0
    updates: int = 0

    @classmethod
    def create(cls, obs_dim: int, num_actions: int, cfg: DqnConfig) -> "DqnAgent":
        rng = np.random.default_rng(cfg.seed)
        params = mlp_init(obs_dim, num_actions, cfg.hidden_sizes, rng)
        return cls(params, params.copy(),
                   ObservationNormalizer(obs_dim, cfg.normalizer_warmup), cfg)

    def epsilon(self) -> float:
        frac = min(self.total_steps / max(self.cfg.eps_decay_steps, 1), 1.0)
        return self.cfg.eps_start + frac * (self.cfg.eps_end - self.cfg.eps_start)

    def act(self, obs: np.ndarray, rng: np.random.Generator,
            greedy: bool = False) -> int:
        q = mlp_forward(self.params, self.normalizer(obs))
        return select_action(q, 0.0 if greedy else self.epsilon(), rng)

    def observe(self, obs: np.ndarray) -> None:
        self.normalizer.update(obs)
        self.total_steps += 1

    def learn(self, replay: ReplayBuffer, rng: np.random.Generator) -> float | None:
        if len(replay) < self.cfg.batch_size:
            return None
        batch = replay.sample(self.cfg.batch_size, rng)
        obs, actions, rewards, next_obs, dones = batch
        batch = (self.normalizer(obs), actions, rewards,
                 self.normalizer(next_obs), dones)
        loss = dqn_update(self.params, self.target_params, batch, self.cfg)
        self.updates += 1
        if self.updates % self.cfg.target_sync_period == 0:
            self.target_params = self.params.copy()
        return loss


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, agent: DqnAgent, config_hash: str = "") -> None:
    arrays = {}
    for i, (w, b) in enumerate(zip(agent.params.weights, agent.params.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    arrays["norm_mean"] = agent.normalizer.mean
    arrays["norm_m2"] = agent.normalizer._m2
    meta = {
        "version": CHECKPOINT_VERSION,
        "num_layers": len(agent.params.weights),
        "norm_count": agent.normalizer.count,
        "norm_warmup": agent.normalizer.warmup,
        "total_steps": agent.total_steps,
        "config_hash": config_hash,
        "dqn_config": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in vars(agent.cfg).items()},
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str, expect_config_hash: str | None = None) -> DqnAgent:
    data = np.load(path)
    meta = json.loads(bytes(data["meta"]).decode())
    if meta["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta['version']}")
    if expect_config_hash is not None and meta["config_hash"] != expect_config_hash:
        raise ValueError("checkpoint was trained under a different configuration")
    raw = dict(meta["dqn_config"])
    raw["hidden_sizes"] = tuple(raw["hidden_sizes"])
    cfg = DqnConfig(**raw)
    n = meta["num_layers"]
    params = MlpParams([data[f"w{i}"] for i in range(n)],
                       [data[f"b{i}"] for i in range(n)])
    norm = ObservationNormalizer(len(data["norm_mean"]), meta["norm_warmup"])
    norm.mean = data["norm_mean"]
    norm._m2 = data["norm_m2"]
    norm.count = meta["norm_count"]
    agent = DqnAgent(params, params.copy(), norm, cfg,
                     total_steps=meta["total_steps"])
    return agent


def config_hash(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainLogRow:
    episode: int
    cumulative_reward: float
    outcome: str
    epsilon: float
    loss: float          # mean over the episode's updates; nan before learning
    rl_steps: int


def train(env, table, pipeline_cfg, dqn_cfg: DqnConfig,
          episodes: int) -> tuple[DqnAgent, list[TrainLogRow]]:
    """Episode-driven DQN training on the discrete action table.

    One transition is appended per RL step, and one network update runs per
    RL step once the replay buffer can fill a batch. A failing episode
    (environment or solver error) is logged and skipped; training continues.
    """
    from .env_sim import observation_length
    from .pipeline import run_episode

    obs_dim = observation_length(env.world, env.chain)
    agent = DqnAgent.create(obs_dim, len(table), dqn_cfg)
    replay = ReplayBuffer(dqn_cfg.replay_capacity, obs_dim)
    rng = np.random.default_rng(dqn_cfg.seed)
    rows: list[TrainLogRow] = []

    for ep in range(episodes):
        losses: list[float] = []

        def policy(obs, _table, _rng):
            agent.observe(obs)
            return agent.act(obs, rng)

        def on_transition(obs, action, reward, next_obs, done):
            replay.push(obs, action, reward, next_obs, done)
            loss = agent.learn(replay, rng)
            if loss is not None:
                losses.append(loss)

        seed = int(np.random.SeedSequence(
            [dqn_cfg.seed, ep]).generate_state(1)[0] % (2 ** 31))
        try:
            result = run_episode(policy, env, table, pipeline_cfg, seed=seed,
                                 on_transition=on_transition)
        except Exception:  # noqa: BLE001 - abort only this episode
            logging.getLogger(__name__).exception("episode %d aborted", ep)
            continue
        rows.append(TrainLogRow(ep, result.cumulative_reward,
                                result.outcome.value, agent.epsilon(),
                                float(np.mean(losses)) if losses else float("nan"),
                                result.rl_steps))
    return agent, rows


def evaluate_greedy(agent: DqnAgent, env, table, pipeline_cfg,
                    episodes: int, seed: int = 0) -> float:
    """Greedy success rate of a frozen policy over seeded episodes."""
    from .env_sim import Outcome
    from .pipeline import run_episode

    rng = np.random.default_rng(seed)
    successes = 0
    for ep in range(episodes):
        ep_seed = int(np.random.SeedSequence(
            [seed, ep]).generate_state(1)[0] % (2 ** 31))
        result = run_episode(lambda o, _t, _r: agent.act(o, rng, greedy=True),
                             env, table, pipeline_cfg, seed=ep_seed)
        successes += result.outcome == Outcome.SUCCESS
    return successes / episodes


def save_training_log(rows: list[TrainLogRow], path: str) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["episode", "cumulative_reward", "outcome", "epsilon",
                         "loss", "rl_steps"])
        for r in rows:
            writer.writerow([r.episode, r.cumulative_reward, r.outcome,
                             r.epsilon, r.loss, r.rl_steps])
