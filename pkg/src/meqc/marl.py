"""Multi-agent PPO over the hybrid server/ratio action space.

Every user is an independent learner holding two actor-critic pairs: a
categorical head over servers and a sigmoid-squashed Gaussian head for the
local ratio, each with its own value network.  Rollouts come from the
shared environment (team reward), advantages from generalized advantage
estimation against each head's critic, and updates from the clipped
surrogate objective.  All numerics run on the hand-rolled ``nn.Mlp``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import MeqcEnv, observation_length
from .nn import Adam, Mlp, Sgd
from .workload import Scenario

CHECKPOINT_SCHEMA_VERSION = 1
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))
_NET_NAMES = ("pi_server", "v_server", "pi_ratio", "v_ratio")


class TrainingError(RuntimeError):
    """Raised when an update produces non-finite numbers."""


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""

    epochs: int = 500
    steps_per_epoch: int = 2000
    updates_per_epoch: int = 2
    batch_size: int = 128
    discount: float = 0.95
    learning_rate: float = 1e-3
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    entropy_coef: float = 0.01
    normalize_advantages: bool = True
    hidden_units: int = 256
    optimizer: str = "adam"
    redraw_tasks: bool = False

    def __post_init__(self):
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        for name in ("epochs", "steps_per_epoch", "updates_per_epoch", "batch_size",
                     "hidden_units"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.clip_epsilon <= 0.0:
            raise ValueError("clip_epsilon must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -700.0, 700.0)))


def _log_sigmoid_slope(z):
    """log of d(sigmoid)/dz, computed stably for large |z|."""
    return -(_softplus(z) + _softplus(-z))


@dataclass(frozen=True)
class ActionSample:
    """One sampled hybrid action with everything PPO needs later."""

    server: int
    ratio: float
    pre_squash: float
    logp_server: float
    logp_ratio: float
    squash_correction: float


class HybridAgent:
    """One user's policy and value networks."""

    def __init__(
        self, obs_dim: int, num_servers: int, hidden: int, rng: np.random.Generator
    ):
        self.obs_dim = obs_dim
        self.num_servers = num_servers
        self.hidden = hidden
        self.nets = {
            "pi_server": Mlp((obs_dim, hidden, hidden, num_servers), rng, out_scale=0.01),
            "v_server": Mlp((obs_dim, hidden, hidden, 1), rng),
            "pi_ratio": Mlp((obs_dim, hidden, hidden, 2), rng, out_scale=0.01),
            "v_ratio": Mlp((obs_dim, hidden, hidden, 1), rng),
        }

    def server_logits(self, obs):
        return self.nets["pi_server"].forward(obs)

    def ratio_params(self, obs):
        """(mean, log_std) of the pre-squash Gaussian, log_std clamped."""
        out = self.nets["pi_ratio"].forward(obs)
        mean = out[..., 0]
        log_std = np.clip(out[..., 1], LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def values(self, obs) -> tuple[float, float]:
        return (
            float(self.nets["v_server"].forward(obs)[0]),
            float(self.nets["v_ratio"].forward(obs)[0]),
        )

    def sample_action(self, obs, rng: np.random.Generator) -> ActionSample:
        """Draw (server, ratio) with exact log-densities.

        The ratio is a Gaussian draw squashed through a sigmoid; its
        log-density carries the change-of-variables correction
        ``-log sigmoid'(z)``, so the reported value is the density of the
        ratio itself.
        """
        logits = self.server_logits(obs)
        logp_all = logits - _logsumexp(logits)
        server = int(rng.choice(self.num_servers, p=np.exp(logp_all)))

        mean, log_std = self.ratio_params(obs)
        z = float(mean + np.exp(log_std) * rng.standard_normal())
        correction = float(_log_sigmoid_slope(z))
        gauss = -0.5 * ((z - float(mean)) / np.exp(float(log_std))) ** 2 - float(
            log_std
        ) - 0.5 * _LOG_2PI
        return ActionSample(
            server=server,
            ratio=float(_sigmoid(z)),
            pre_squash=z,
            logp_server=float(logp_all[server]),
            logp_ratio=gauss - correction,
            squash_correction=correction,
        )

    def greedy_action(self, obs) -> tuple[int, float]:
        """Deterministic mode: argmax server, squashed mean ratio."""
        logits = self.server_logits(obs)
        mean, _ = self.ratio_params(obs)
        return int(np.argmax(logits)), float(_sigmoid(float(mean)))

    def flat_params(self) -> dict[str, np.ndarray]:
        return {name: net.flat_params() for name, net in self.nets.items()}

    def set_flat_params(self, params: dict[str, np.ndarray]) -> None:
        for name, vec in params.items():
            self.nets[name].set_flat_params(vec)

    def params_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.flat_params().values())


def _logsumexp(x):
    m = np.max(x, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True))).squeeze(-1)


def gae(
    rewards: np.ndarray, values: np.ndarray, discount: float, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation.

    ``values`` must hold one entry per step plus the bootstrap value of
    the state after the last step.  Returns (advantages, returns) where
    returns are advantages plus the value baseline.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    steps = len(rewards)
    if len(values) != steps + 1:
        raise ValueError("values must have one more entry than rewards")
    advantages = np.empty(steps)
    acc = 0.0
    for t in range(steps - 1, -1, -1):
        delta = rewards[t] + discount * values[t + 1] - values[t]
        acc = delta + discount * lam * acc
        advantages[t] = acc
    return advantages, advantages + values[:-1]


class RolloutBuffer:
    """Fixed-capacity per-agent storage for one epoch of experience."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.cursor = 0
        self.obs = np.empty((capacity, obs_dim))
        self.server = np.empty(capacity, dtype=np.int64)
        self.pre_squash = np.empty(capacity)
        self.logp_server = np.empty(capacity)
        self.logp_ratio = np.empty(capacity)
        self.squash_correction = np.empty(capacity)
        self.reward = np.empty(capacity)
        self.value_server = np.empty(capacity)
        self.value_ratio = np.empty(capacity)
        self.adv_server = None
        self.adv_ratio = None
        self.ret_server = None
        self.ret_ratio = None

    def add(self, obs, sample: ActionSample, reward: float, values: tuple[float, float]):
        if self.cursor >= self.capacity:
            raise IndexError("rollout buffer is full")
        i = self.cursor
        self.obs[i] = obs
        self.server[i] = sample.server
        self.pre_squash[i] = sample.pre_squash
        self.logp_server[i] = sample.logp_server
        self.logp_ratio[i] = sample.logp_ratio
        self.squash_correction[i] = sample.squash_correction
        self.reward[i] = reward
        self.value_server[i], self.value_ratio[i] = values
        self.cursor += 1

    def finish(self, last_values: tuple[float, float], discount: float, lam: float):
        """Compute per-head advantages/returns over the written prefix."""
        n = self.cursor
        vs = np.append(self.value_server[:n], last_values[0])
        vr = np.append(self.value_ratio[:n], last_values[1])
        self.adv_server, self.ret_server = gae(self.reward[:n], vs, discount, lam)
        self.adv_ratio, self.ret_ratio = gae(self.reward[:n], vr, discount, lam)

    def batch(self, idx: np.ndarray) -> dict[str, np.ndarray]:
        if self.adv_server is None:
            raise RuntimeError("finish() must run before sampling batches")
        if len(idx) and idx.max() >= self.cursor:
            raise IndexError("batch index past the write cursor")
        return {
            "obs": self.obs[idx],
            "server": self.server[idx],
            "pre_squash": self.pre_squash[idx],
            "logp_server": self.logp_server[idx],
            "logp_ratio": self.logp_ratio[idx],
            "squash_correction": self.squash_correction[idx],
            "adv_server": self.adv_server[idx],
            "adv_ratio": self.adv_ratio[idx],
            "ret_server": self.ret_server[idx],
            "ret_ratio": self.ret_ratio[idx],
        }


@dataclass(frozen=True)
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float


def _normalize(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def _surrogate_coef(ratio, adv, clip_eps):
    """Per-sample d(clipped surrogate)/d(log-prob); zero where clipping gates."""
    gated = ((ratio > 1.0 + clip_eps) & (adv > 0)) | (
        (ratio < 1.0 - clip_eps) & (adv < 0)
    )
    return np.where(gated, 0.0, ratio * adv)


def ppo_update(agent: HybridAgent, optimizers: dict, batch: dict, cfg: TrainConfig) -> UpdateStats:
    """One clipped-surrogate update of all four networks on one minibatch.

    Both policy heads maximize the clipped objective plus an entropy
    bonus; both critics descend on squared error against their GAE
    returns.  Raises ``TrainingError`` if any loss goes non-finite.
    """
    obs = batch["obs"]
    n = len(obs)
    adv_a = batch["adv_server"]
    adv_r = batch["adv_ratio"]
    if cfg.normalize_advantages and n > 1:
        adv_a = _normalize(adv_a)
        adv_r = _normalize(adv_r)

    # Discrete head.
    logits, cache_a = agent.nets["pi_server"].forward_cached(obs)
    logp_all = logits - _logsumexp(logits)[:, None]
    probs = np.exp(logp_all)
    logp_new = logp_all[np.arange(n), batch["server"]]
    ratio = np.exp(logp_new - batch["logp_server"])
    surr_a = np.minimum(
        ratio * adv_a, np.clip(ratio, 1 - cfg.clip_epsilon, 1 + cfg.clip_epsilon) * adv_a
    )
    entropy_a = -(probs * logp_all).sum(axis=1)
    coef = _surrogate_coef(ratio, adv_a, cfg.clip_epsilon)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(n), batch["server"]] = 1.0
    up_logits = -(coef / n)[:, None] * (one_hot - probs)
    up_logits += (cfg.entropy_coef / n) * probs * (logp_all + entropy_a[:, None])
    optimizers["pi_server"].step(agent.nets["pi_server"].backward(cache_a, up_logits))

    # Continuous head.
    out, cache_r = agent.nets["pi_ratio"].forward_cached(obs)
    mean = out[:, 0]
    raw_ls = out[:, 1]
    log_std = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
    ls_open = (raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX)
    std = np.exp(log_std)
    zscore = (batch["pre_squash"] - mean) / std
    logp_new_r = (
        -0.5 * zscore**2 - log_std - 0.5 * _LOG_2PI - batch["squash_correction"]
    )
    ratio_r = np.exp(logp_new_r - batch["logp_ratio"])
    surr_r = np.minimum(
        ratio_r * adv_r,
        np.clip(ratio_r, 1 - cfg.clip_epsilon, 1 + cfg.clip_epsilon) * adv_r,
    )
    entropy_r = log_std + 0.5 * (_LOG_2PI + 1.0)
    coef_r = _surrogate_coef(ratio_r, adv_r, cfg.clip_epsilon)
    up_out = np.zeros_like(out)
    up_out[:, 0] = -(coef_r / n) * (zscore / std)
    up_out[:, 1] = (-(coef_r / n) * (zscore**2 - 1.0) - cfg.entropy_coef / n) * ls_open
    optimizers["pi_ratio"].step(agent.nets["pi_ratio"].backward(cache_r, up_out))

    # Critics.
    value_loss = 0.0
    for net_name, target in (("v_server", batch["ret_server"]), ("v_ratio", batch["ret_ratio"])):
        v, cache_v = agent.nets[net_name].forward_cached(obs)
        err = v[:, 0] - target
        value_loss += float(np.mean(err**2))
        optimizers[net_name].step(
            agent.nets[net_name].backward(cache_v, (2.0 * err / n)[:, None])
        )

    stats = UpdateStats(
        policy_loss=float(-(surr_a.mean() + surr_r.mean())),
        value_loss=value_loss,
        entropy=float(entropy_a.mean() + entropy_r.mean()),
    )
    if not all(np.isfinite(v) for v in (stats.policy_loss, stats.value_loss, stats.entropy)):
        raise TrainingError(
            f"non-finite update: policy_loss={stats.policy_loss} "
            f"value_loss={stats.value_loss} entropy={stats.entropy}"
        )
    return stats


def _make_optimizers(agent: HybridAgent, cfg: TrainConfig) -> dict:
    maker = Adam if cfg.optimizer == "adam" else Sgd
    return {name: maker(agent.nets[name], cfg.learning_rate) for name in _NET_NAMES}


@dataclass
class TrainResult:
    agents: list[HybridAgent]
    curve: list[dict] = field(default_factory=list)

    @property
    def final_mean_cost(self) -> float:
        return self.curve[-1]["mean_cost"]


def train(
    scenario: Scenario,
    cfg: TrainConfig,
    seed: int,
    *,
    curve_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    """Train independent PPO learners on one scenario.

    Deterministic in ``seed``.  Writes a per-epoch learning curve CSV and
    a parameter checkpoint when paths are given.  If parameters go
    non-finite, the last good checkpoint is saved (when a path is given)
    before ``TrainingError`` propagates.
    """
    root = np.random.SeedSequence(seed)
    env_ss, sample_ss, batch_ss, agents_ss = root.spawn(4)
    env = MeqcEnv(
        scenario,
        redraw_tasks=cfg.redraw_tasks,
        rng=np.random.default_rng(env_ss),
    )
    obs_dim = observation_length(env.num_servers)
    agents = [
        HybridAgent(obs_dim, env.num_servers, cfg.hidden_units, np.random.default_rng(ss))
        for ss in agents_ss.spawn(env.num_users)
    ]
    optimizers = [_make_optimizers(agent, cfg) for agent in agents]
    sample_rng = np.random.default_rng(sample_ss)
    batch_rng = np.random.default_rng(batch_ss)

    result = TrainResult(agents=agents)
    last_good = [agent.flat_params() for agent in agents]
    for epoch in range(cfg.epochs):
        buffers = [RolloutBuffer(cfg.steps_per_epoch, obs_dim) for _ in agents]
        obs = env.reset()
        for _ in range(cfg.steps_per_epoch):
            samples = [
                agent.sample_action(obs[u], sample_rng)
                for u, agent in enumerate(agents)
            ]
            step = env.step([(s.server, s.ratio) for s in samples])
            for u, agent in enumerate(agents):
                buffers[u].add(obs[u], samples[u], step.reward, agent.values(obs[u]))
            obs = list(step.observations)
        for u, agent in enumerate(agents):
            buffers[u].finish(agent.values(obs[u]), cfg.discount, cfg.gae_lambda)

        stats: list[UpdateStats] = []
        try:
            for _ in range(cfg.updates_per_epoch):
                idx = batch_rng.choice(
                    cfg.steps_per_epoch,
                    size=min(cfg.batch_size, cfg.steps_per_epoch),
                    replace=False,
                )
                for agent, opts, buf in zip(agents, optimizers, buffers):
                    stats.append(ppo_update(agent, opts, buf.batch(idx), cfg))
            bad = [u for u, agent in enumerate(agents) if not agent.params_finite()]
            if bad:
                raise TrainingError(f"non-finite parameters for agents {bad}")
        except TrainingError:
            if checkpoint_path is not None:
                for agent, params in zip(agents, last_good):
                    agent.set_flat_params(params)
                save_checkpoint(checkpoint_path, agents, scenario_seed=scenario.rng_seed)
            raise
        last_good = [agent.flat_params() for agent in agents]

        result.curve.append(
            {
                "epoch": epoch,
                "mean_cost": float(-buffers[0].reward[: buffers[0].cursor].mean()),
                "policy_loss": float(np.mean([s.policy_loss for s in stats])),
                "value_loss": float(np.mean([s.value_loss for s in stats])),
                "entropy": float(np.mean([s.entropy for s in stats])),
            }
        )

    if curve_path is not None:
        write_learning_curve(curve_path, result.curve)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, agents, scenario_seed=scenario.rng_seed)
    return result


def write_learning_curve(path: str | Path, curve: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_cost", "policy_loss", "value_loss", "entropy"])
        for row in curve:
            writer.writerow(
                [
                    row["epoch"],
                    repr(row["mean_cost"]),
                    repr(row["policy_loss"]),
                    repr(row["value_loss"]),
                    repr(row["entropy"]),
                ]
            )


def save_checkpoint(path: str | Path, agents: list[HybridAgent], **meta) -> None:
    """Versioned dump of every agent's parameter vectors plus shape metadata."""
    arrays = {
        f"agent{i}.{name}": vec
        for i, agent in enumerate(agents)
        for name, vec in agent.flat_params().items()
    }
    first = agents[0]
    np.savez(
        path,
        schema_version=CHECKPOINT_SCHEMA_VERSION,
        num_agents=len(agents),
        obs_dim=first.obs_dim,
        num_servers=first.num_servers,
        hidden_units=first.hidden,
        **{k: np.float64(v) for k, v in meta.items()},
        **arrays,
    )


def load_checkpoint(path: str | Path) -> list[HybridAgent]:
    with np.load(path) as data:
        version = int(data["schema_version"])
        if version != CHECKPOINT_SCHEMA_VERSION:
            raise ValueError(f"unsupported checkpoint schema_version {version}")
        num_agents = int(data["num_agents"])
        obs_dim = int(data["obs_dim"])
        num_servers = int(data["num_servers"])
        hidden = int(data["hidden_units"])
        rng = np.random.default_rng(0)  # immediately overwritten
        agents = []
        for i in range(num_agents):
            agent = HybridAgent(obs_dim, num_servers, hidden, rng)
            agent.set_flat_params(
                {name: data[f"agent{i}.{name}"] for name in _NET_NAMES}
            )
            agents.append(agent)
    return agents


class LearnedPolicy:
    """Deterministic policy adapter over trained agents (for evaluation)."""

    def __init__(self, agents: list[HybridAgent]):
        self.agents = agents

    def act(self, scenario, observations, rng):
        return [
            agent.greedy_action(obs) for agent, obs in zip(self.agents, observations)
        ]
