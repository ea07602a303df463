"""Deep-Q training: replay buffer, action policies, TD updates, training loop.

The loop interleaves acting and learning strictly round-robin: per learner
step each parallel environment takes one softmax-exploration step with the
current policy parameters, then the learner draws one minibatch, applies one
Adam update, and soft-updates the target network. Everything is seeded
through named streams, so single-process runs are bit-reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .environment import EnvConfig, SearchEnv
from .neuralnet import (
    AdamState,
    QNetwork,
    QNetworkSpec,
    adam_step,
    smooth_l1,
    smooth_l1_grad,
)
from .rng import (
    RngStream,
    STREAM_EXPLORE,
    STREAM_INIT,
    STREAM_MINIBATCH,
)

# env stream key tags: actors (0, worker), validation (1, index), evaluation (2,)
KEY_ACTOR = 0
KEY_VALIDATION = 1
KEY_EVAL = 2


@dataclass
class TrainConfig:
    discount: float = 0.95
    target_update_rate: float = 0.005
    temperature: float = 0.1
    learning_rate: float = 3e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_beta: float = 1.0
    batch_size: int = 128
    buffer_capacity: int = 50_000
    prefill_fraction: float = 0.5
    train_steps: int = 10_000_000
    validation_interval: int = 50_000
    validation_episodes: int = 120
    parallel_envs: int = 1

    def validate(self) -> None:
        if not 0 <= self.discount <= 1:
            raise ValueError("train.discount must be in [0, 1]")
        if not 0 <= self.target_update_rate <= 1:
            raise ValueError("train.target_update_rate must be in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("train.temperature must be > 0")
        if self.learning_rate <= 0:
            raise ValueError("train.learning_rate must be > 0")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("train.buffer_capacity must be >= train.batch_size >= 1")
        if not 0 < self.prefill_fraction <= 1:
            raise ValueError("train.prefill_fraction must be in (0, 1]")
        if self.train_steps < 0:
            raise ValueError("train.train_steps must be >= 0")
        if self.validation_interval < 1 or self.validation_episodes < 1:
            raise ValueError("validation interval and episode count must be >= 1")
        if self.parallel_envs < 1:
            raise ValueError("train.parallel_envs must be >= 1")


def softmax_probs(q: np.ndarray, temperature: float) -> np.ndarray:
    """Boltzmann probabilities over actions; max-subtracted for stability."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    z = (q - q.max(axis=-1, keepdims=True)) / temperature
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_action(q: np.ndarray, temperature: float, rng: RngStream) -> int:
    """Sample one action from the Boltzmann policy (one uniform draw)."""
    p = softmax_probs(np.asarray(q, dtype=np.float64), temperature)
    u = rng.uniform()
    return int(min(np.searchsorted(np.cumsum(p), u, side="right"), len(p) - 1))


def greedy_action(q: np.ndarray) -> int:
    """Argmax action; ties resolve to the lowest action index."""
    return int(np.argmax(q))


def td_targets(
    rewards: np.ndarray, next_q_max: np.ndarray, terminals: np.ndarray, discount: float
) -> np.ndarray:
    """One-step targets r + gamma * max_a Q'(s', a), masked at terminals."""
    return rewards + discount * next_q_max * (1.0 - terminals)


def soft_update(target: np.ndarray, policy: np.ndarray, rate: float) -> None:
    """In-place target <- (1 - rate) * target + rate * policy."""
    target *= 1.0 - rate
    target += rate * policy


class ReplayBuffer:
    """Fixed-capacity ring of transitions in preallocated float32 arrays."""

    def __init__(self, capacity: int, local_shape, global_shape):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.count = 0
        self.locals = np.zeros((capacity, *local_shape), dtype=np.float32)
        self.globals_ = np.zeros((capacity, *global_shape), dtype=np.float32)
        self.budgets = np.zeros(capacity, dtype=np.float32)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.next_locals = np.zeros_like(self.locals)
        self.next_globals = np.zeros_like(self.globals_)
        self.next_budgets = np.zeros_like(self.budgets)
        self.terminals = np.zeros(capacity, dtype=np.float32)

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    def push(self, obs, action: int, reward: float, next_obs, terminal: bool) -> None:
        i = self.count % self.capacity
        self.locals[i] = obs.local
        self.globals_[i] = obs.global_
        self.budgets[i] = obs.budget
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_locals[i] = next_obs.local
        self.next_globals[i] = next_obs.global_
        self.next_budgets[i] = next_obs.budget
        self.terminals[i] = float(terminal)
        self.count += 1

    def sample(self, batch_size: int, rng: RngStream):
        """Uniform without-replacement minibatch of stored transitions."""
        n = len(self)
        if batch_size > n:
            raise ValueError(f"cannot sample {batch_size} from {n} transitions")
        idx = rng.choice_without_replacement(n, batch_size)
        return (
            self.locals[idx],
            self.globals_[idx],
            self.budgets[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_locals[idx],
            self.next_globals[idx],
            self.next_budgets[idx],
            self.terminals[idx],
        )


def train_step(
    net: QNetwork,
    params: np.ndarray,
    target_params: np.ndarray,
    opt: AdamState,
    batch,
    cfg: TrainConfig,
) -> float:
    """One TD(0) update on a minibatch; returns the mean smooth-L1 loss.

    Updates params (Adam) and target_params (soft update) in place.
    """
    loc, glo, bud, actions, rewards, nloc, nglo, nbud, terms = batch
    q_next = net.forward(target_params, nloc, nglo, nbud)
    y = td_targets(rewards, q_next.max(axis=1), terms, cfg.discount)
    q, cache = net.forward(params, loc, glo, bud, need_cache=True)
    rows = np.arange(len(actions))
    diff = q[rows, actions] - y
    loss = float(smooth_l1(diff, cfg.loss_beta).mean())
    upstream = np.zeros_like(q)
    upstream[rows, actions] = smooth_l1_grad(diff, cfg.loss_beta) / len(actions)
    grads = net.backward(params, cache, upstream)
    adam_step(
        params, grads, opt, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    )
    soft_update(target_params, params, cfg.target_update_rate)
    return loss


class GreedyQPolicy:
    """Deterministic argmax policy over the network's Q-values."""

    def __init__(self, net: QNetwork, params: np.ndarray):
        self.net = net
        self.params = params
        self.last_q: np.ndarray | None = None

    def act(self, obs) -> int:
        q = self.net.forward(self.params, obs.local, obs.global_, obs.budget)
        self.last_q = q
        return greedy_action(q)


class SoftmaxQPolicy:
    """Boltzmann exploration policy used by the actor loop."""

    def __init__(self, net: QNetwork, params: np.ndarray, temperature: float, rng: RngStream):
        self.net = net
        self.params = params
        self.temperature = temperature
        self.rng = rng
        self.last_q: np.ndarray | None = None

    def act(self, obs) -> int:
        q = self.net.forward(self.params, obs.local, obs.global_, obs.budget)
        self.last_q = q
        return softmax_action(q, self.temperature, self.rng)


@dataclass
class TrainResult:
    spec: QNetworkSpec
    best_params: np.ndarray
    best_step: int
    best_reward: float
    final_params: np.ndarray
    history: list  # dict rows: step, loss, val_mean_reward, val_mean_found
    env_steps: int
    episodes: int
    wall_time: float


def training_loop(
    env_cfg: EnvConfig,
    spec: QNetworkSpec,
    cfg: TrainConfig,
    seed: int,
    progress=None,
    fixed_field=None,
) -> TrainResult:
    """Run the full acting/learning loop and return the best-validated policy.

    Validation runs every cfg.validation_interval learner steps (and at the
    final step): the greedy policy plays cfg.validation_episodes fresh
    episodes and the parameter snapshot with the highest mean episode reward
    is kept. train_steps=0 returns the freshly initialized parameters and an
    empty history. fixed_field disables field randomization entirely (each
    episode replays that field).
    """
    cfg.validate()
    env_cfg.validate()
    t0 = time.perf_counter()
    net = QNetwork(spec)
    params = net.init_params(RngStream(seed, STREAM_INIT))
    target_params = params.copy()
    opt = AdamState.zeros(net.param_count)
    explore_rng = RngStream(seed, STREAM_EXPLORE)
    batch_rng = RngStream(seed, STREAM_MINIBATCH)

    envs = [
        SearchEnv(env_cfg, seed, key=(KEY_ACTOR, i), fixed_field=fixed_field)
        for i in range(cfg.parallel_envs)
    ]
    obs = [env.reset() for env in envs]
    buffer = ReplayBuffer(
        cfg.buffer_capacity,
        (3, env_cfg.fov_size, env_cfg.fov_size),
        (3, env_cfg.global_size, env_cfg.global_size),
    )

    episodes = 0
    env_steps = 0

    def act_all() -> None:
        nonlocal episodes, env_steps
        n = len(envs)
        loc = np.stack([o.local for o in obs])
        glo = np.stack([o.global_ for o in obs])
        bud = np.array([o.budget for o in obs], dtype=np.float32)
        q = net.forward(params, loc, glo, bud)
        for i, env in enumerate(envs):
            a = softmax_action(q[i], cfg.temperature, explore_rng)
            res = env.step(a)
            buffer.push(obs[i], a, res.reward, res.observation, res.done)
            env_steps += 1
            if res.done:
                obs[i] = env.reset()
                episodes += 1
            else:
                obs[i] = res.observation

    history: list[dict] = []
    best_params = params.copy()
    best_step = 0
    best_reward = -np.inf

    if cfg.train_steps > 0:
        prefill = max(cfg.batch_size, int(cfg.prefill_fraction * cfg.buffer_capacity))
        while len(buffer) < prefill:
            act_all()

        loss_acc = 0.0
        loss_n = 0
        val_index = 0
        for step in range(1, cfg.train_steps + 1):
            act_all()
            loss = train_step(net, params, target_params, opt, buffer.sample(cfg.batch_size, batch_rng), cfg)
            loss_acc += loss
            loss_n += 1
            if step % cfg.validation_interval == 0 or step == cfg.train_steps:
                val_reward, val_found = _validate(
                    env_cfg, net, params, cfg, seed, val_index, fixed_field
                )
                val_index += 1
                row = {
                    "step": step,
                    "loss": loss_acc / max(loss_n, 1),
                    "val_mean_reward": val_reward,
                    "val_mean_found": val_found,
                }
                history.append(row)
                loss_acc, loss_n = 0.0, 0
                if val_reward > best_reward:
                    best_reward = val_reward
                    best_step = step
                    best_params = params.copy()
                if progress is not None:
                    progress(row)

    return TrainResult(
        spec=spec,
        best_params=best_params,
        best_step=best_step,
        best_reward=float(best_reward),
        final_params=params,
        history=history,
        env_steps=env_steps,
        episodes=episodes,
        wall_time=time.perf_counter() - t0,
    )


def _validate(env_cfg, net, params, cfg, seed, val_index, fixed_field=None) -> tuple[float, float]:
    from .evaluation import run_episode  # local import; evaluation imports policies from here

    env = SearchEnv(env_cfg, seed, key=(KEY_VALIDATION, val_index), fixed_field=fixed_field)
    policy = GreedyQPolicy(net, params)
    rewards = []
    found = []
    for _ in range(cfg.validation_episodes):
        log = run_episode(env, policy)
        rewards.append(log.reward_sum)
        found.append(log.found_fraction)
    return float(np.mean(rewards)), float(np.mean(found))
