"""PPO with a diagonal Gaussian policy over raw (pre-softmax) actions."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from darl import nn
from darl.env import PortfolioEnv, project_to_simplex
from darl.kernels import gae

log = logging.getLogger(__name__)

LOG_STD_BOUNDS = (-5.0, 1.0)
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 10
    minibatch: int = 64
    lr: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    horizon: int = 512
    target_kl: float = 0.02
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = -0.5

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lambda must lie in [0, 1]")


@dataclass
class Policy:
    mean_net: nn.Mlp
    log_std: np.ndarray

    def clamp(self) -> None:
        np.clip(self.log_std, *LOG_STD_BOUNDS, out=self.log_std)

    def weights(self, obs) -> np.ndarray:
        """Deterministic portfolio weights for one observation."""
        return project_to_simplex(self.mean_net(obs))


@dataclass
class Agent:
    policy: Policy
    value: nn.Mlp
    config: PpoConfig
    seed: int = 0
    policy_opt: nn.AdamState | None = None
    value_opt: nn.AdamState | None = None

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "policy": self.policy.mean_net.to_dict(),
            "log_std": self.policy.log_std.tolist(),
            "value": self.value.to_dict(),
            "config": asdict(self.config),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Agent":
        cfg = dict(d["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        return cls(Policy(nn.Mlp.from_dict(d["policy"]), np.asarray(d["log_std"], dtype=np.float64)),
                   nn.Mlp.from_dict(d["value"]), PpoConfig(**cfg), d.get("seed", 0))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Agent":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_agent(obs_dim: int, n_assets: int, config: PpoConfig | None = None, seed: int = 0) -> Agent:
    config = config or PpoConfig()
    ss = np.random.SeedSequence(seed)
    s_pol, s_val = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    mean_net = nn.init_mlp([obs_dim, *config.hidden, n_assets], "tanh", seed=s_pol)
    mean_net.weights[-1] *= 0.01  # near-uniform initial allocation
    value = nn.init_mlp([obs_dim, *config.hidden, 1], "tanh", seed=s_val)
    policy = Policy(mean_net, np.full(n_assets, config.init_log_std))
    return Agent(policy, value, config, seed)


def gaussian_log_prob(actions, mean, log_std) -> np.ndarray:
    """Diagonal Gaussian log-density, summed over the last axis."""
    z = (np.asarray(actions) - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * np.shape(mean)[-1] * LOG_2PI


def act(policy: Policy, obs, rng: np.random.Generator | None = None, deterministic: bool = False):
    """Returns (raw action, log-probability)."""
    mu = policy.mean_net(obs)
    if deterministic:
        a = mu
    else:
        a = mu + np.exp(policy.log_std) * rng.standard_normal(mu.shape)
    return a, float(gaussian_log_prob(a, mu, policy.log_std))


def compute_gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """(advantages, returns); ``last_value`` bootstraps a non-terminal final step."""
    return gae(rewards, values, dones, float(last_value), float(gamma), float(lam))


def normalize(adv) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-12)


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


def clipped_surrogate(ratio, adv, clip: float) -> np.ndarray:
    """Per-sample min(rho A, clip(rho) A)."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


def ppo_update(agent: Agent, batch: Batch, rng: np.random.Generator) -> dict:
    """Clipped-surrogate epochs over shuffled minibatches with KL early stopping."""
    cfg = agent.config
    pol = agent.policy
    if agent.policy_opt is None:
        agent.policy_opt = nn.adam_init(pol.mean_net.params() + [pol.log_std], lr=cfg.lr)
        agent.value_opt = nn.adam_init(agent.value, lr=cfg.lr)
    n = batch.obs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    adv_all = normalize(batch.advantages)
    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_fraction": [], "approx_kl": []}
    stopped = False
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(0, n, cfg.minibatch):
            idx = order[s : s + cfg.minibatch]
            m = idx.size
            obs, a, old_lp, adv = batch.obs[idx], batch.actions[idx], batch.log_probs[idx], adv_all[idx]
            mu, tape = nn.forward(pol.mean_net, obs)
            std = np.exp(pol.log_std)
            new_lp = gaussian_log_prob(a, mu, pol.log_std)
            ratio = np.exp(new_lp - old_lp)
            surr = clipped_surrogate(ratio, adv, cfg.clip)
            policy_loss = -float(np.mean(surr))
            entropy = float(np.sum(pol.log_std) + 0.5 * mu.shape[1] * (1.0 + LOG_2PI))
            v, vtape = nn.forward(agent.value, obs)
            v = v[:, 0]
            value_loss = float(np.mean((v - batch.returns[idx]) ** 2))
            if not np.isfinite(policy_loss + value_loss):
                raise FloatingPointError("non-finite PPO loss; update aborted")

            # gradient flows only where the unclipped term is the active minimum
            active = ratio * adv <= np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
            d_lp = -(active * ratio * adv) / m
            z = (a - mu) / std
            g_mu = d_lp[:, None] * (z / std)
            g_log_std = (d_lp[:, None] * (z * z - 1.0)).sum(axis=0) - cfg.entropy_coef
            grads = nn.backward(pol.mean_net, tape, g_mu) + [g_log_std]
            nn.adam_step(pol.mean_net.params() + [pol.log_std], grads, agent.policy_opt)
            pol.clamp()
            g_v = cfg.value_coef * 2.0 * (v - batch.returns[idx]) / m
            nn.adam_step(agent.value, nn.backward(agent.value, vtape, g_v[:, None]), agent.value_opt)

            kl = float(np.mean(old_lp - new_lp))
            stats["policy_loss"].append(policy_loss)
            stats["value_loss"].append(value_loss)
            stats["entropy"].append(entropy)
            stats["clip_fraction"].append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip)))
            stats["approx_kl"].append(kl)
            if kl > cfg.target_kl:
                stopped = True
                break
        if stopped:
            break
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["early_stop"] = stopped
    return out


EnvFactory = Callable[[int], tuple[PortfolioEnv, np.ndarray]]


@dataclass
class LearningCurve:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["update", "mean_reward", "clip_fraction", "approx_kl"])
            for r in self.rows:
                w.writerow([r["update"], repr(r["mean_reward"]), repr(r["clip_fraction"]), repr(r["approx_kl"])])

    def mean_rewards(self) -> np.ndarray:
        return np.array([r["mean_reward"] for r in self.rows])


def collect_rollout(agent: Agent, env_factory: EnvFactory, state: dict, horizon: int, rng) -> tuple[Batch, dict]:
    """Run ``horizon`` steps, resuming the episode held in ``state``."""
    cfg = agent.config
    obs_l, act_l, lp_l, rew_l, val_l, done_l = [], [], [], [], [], []
    episode_returns = []
    for _ in range(horizon):
        if state.get("env") is None:
            env, obs = env_factory(state["episode"])
            state.update(env=env, obs=obs, ep_reward=0.0)
            state["episode"] += 1
        env, obs = state["env"], state["obs"]
        a, lp = act(agent.policy, obs, rng)
        res = env.step(project_to_simplex(a))
        obs_l.append(obs)
        act_l.append(a)
        lp_l.append(lp)
        rew_l.append(res.reward)
        val_l.append(float(agent.value(obs)[0]))
        done_l.append(float(res.done))
        state["ep_reward"] += res.reward
        if res.done:
            episode_returns.append(state["ep_reward"])
            state["env"] = None
        else:
            state["obs"] = res.observation
    last_value = 0.0 if state.get("env") is None else float(agent.value(state["obs"])[0])
    adv, ret = compute_gae(rew_l, val_l, done_l, cfg.gamma, cfg.lam, last_value)
    batch = Batch(np.array(obs_l), np.array(act_l), np.array(lp_l), adv, ret)
    return batch, {"mean_reward": float(np.mean(rew_l)), "episodes": episode_returns}


def train_agent(env_factory: EnvFactory, agent: Agent, total_steps: int, seed: int = 0) -> LearningCurve:
    """Alternate rollout collection and PPO updates for ``total_steps`` env steps.

    ``env_factory(k)`` must return a freshly reset ``(env, observation)`` for the
    k-th episode. Single-threaded and deterministic under ``seed``.
    """
    rng = np.random.default_rng(seed)
    curve = LearningCurve()
    state = {"env": None, "episode": 0}
    done_steps = 0
    update = 0
    while done_steps < total_steps:
        horizon = min(agent.config.horizon, total_steps - done_steps)
        batch, roll = collect_rollout(agent, env_factory, state, horizon, rng)
        stats = ppo_update(agent, batch, rng)
        done_steps += horizon
        curve.rows.append({"update": update, "mean_reward": roll["mean_reward"],
                           "clip_fraction": stats["clip_fraction"], "approx_kl": stats["approx_kl"]})
        if update % 10 == 0:
            log.info("ppo update %d steps %d mean reward %.6f kl %.4f", update, done_steps,
                     roll["mean_reward"], stats["approx_kl"])
        update += 1
    return curve
