"""Mixing diffusion-generated crash episodes into PPO training."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from darl import diffusion
from darl.agent import Agent, LearningCurve, PpoConfig, make_agent, train_agent
from darl.diffusion import DdpmModel, DiffusionConfig
from darl.env import EnvConfig, PortfolioEnv
from darl.market_data import (
    SYNTHETIC,
    PriceTable,
    StandardizationStats,
    WindowDataset,
    compute_returns,
    extract_windows,
)

log = logging.getLogger(__name__)


@dataclass
class AugmentationPlan:
    synthetic_fraction: float = 0.3
    intensities: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.synthetic_fraction <= 1.0:
            raise ValueError("synthetic fraction must lie in [0, 1]")
        self.intensities = tuple(float(c) for c in self.intensities)
        if not self.intensities or any(not 0.0 <= c <= 1.0 for c in self.intensities):
            raise ValueError("intensities must be a non-empty menu of values in [0, 1]")

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))

    @classmethod
    def from_json(cls, path) -> "AugmentationPlan":
        return cls(**json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class EpisodeSpec:
    kind: str  # "real" or "synthetic"
    start: int  # real episode start, or the real index whose close seeds a synthetic path
    intensity: float | None = None
    seed: int | None = None


def build_episode_schedule(plan: AugmentationPlan, count: int, starts, rng: np.random.Generator) -> list[EpisodeSpec]:
    """``count`` episode slots, ``round(fraction * count)`` of them synthetic.

    Real slots and synthetic base dates draw from ``starts``. The random draws
    do not depend on the fraction, so a zero-fraction plan reproduces the
    plain real-episode sequence exactly.
    """
    if count < 1:
        raise ValueError("need at least one episode")
    starts = np.asarray(starts)
    n_syn = int(round(plan.synthetic_fraction * count))
    picks = starts[rng.integers(0, len(starts), size=count)]
    syn_slots = set(rng.permutation(count)[:n_syn].tolist())
    syn_rng = np.random.default_rng([plan.seed, 7])
    out = []
    for k in range(count):
        if k in syn_slots:
            c = plan.intensities[int(syn_rng.integers(len(plan.intensities)))]
            out.append(EpisodeSpec("synthetic", int(picks[k]), c, int(syn_rng.integers(2**31))))
        else:
            out.append(EpisodeSpec("real", int(picks[k])))
    return out


def realize_synthetic_episode(ddpm: DdpmModel, spec: EpisodeSpec, stats: StandardizationStats,
                              base_prices) -> np.ndarray:
    """One generated window at ``spec.intensity`` turned into an L x N price path."""
    window = diffusion.sample(ddpm, 1, spec.intensity, spec.seed)[0]
    return diffusion.synthetic_to_prices(window, stats, base_prices)


def synthetic_table(history: PriceTable, start: int, path: np.ndarray) -> PriceTable:
    """Real history up to ``start`` followed by a generated path, tagged synthetic."""
    hist = history.slice(0, start + 1)
    extra = np.busday_offset(hist.dates[-1], np.arange(1, path.shape[0] + 1), roll="forward")
    return PriceTable(np.concatenate([hist.dates, extra]), list(history.tickers),
                      np.vstack([hist.closes, path]), SYNTHETIC)


@dataclass
class EpisodeSource:
    """Env factory for ``train_agent`` that replays an episode schedule."""

    prices: PriceTable
    schedule: list[EpisodeSpec]
    env_config: EnvConfig
    episode_length: int
    ddpm: DdpmModel | None = None
    stats: StandardizationStats | None = None
    _real_env: PortfolioEnv | None = field(default=None, repr=False)

    def __call__(self, k: int):
        spec = self.schedule[k % len(self.schedule)]
        if spec.kind == "real":
            if self._real_env is None:
                self._real_env = PortfolioEnv(self.prices, self.env_config)
            env = self._real_env
            return env, env.reset(spec.start, self.episode_length)
        path = realize_synthetic_episode(self.ddpm, spec, self.stats, self.prices.closes[spec.start])
        env = PortfolioEnv(synthetic_table(self.prices, spec.start, path), self.env_config)
        return env, env.reset(spec.start, path.shape[0])


def episode_starts(prices: PriceTable, env_config: EnvConfig, episode_length: int) -> np.ndarray:
    lo = max(env_config.cov_lookback, env_config.obs_window)
    hi = len(prices) - 1 - episode_length
    if hi < lo:
        raise ValueError("training data too short for one episode after the covariance lookback")
    return np.arange(lo, hi + 1)


def stage_seeds(seed: int) -> dict[str, int]:
    """Independent per-stage seeds so no stage perturbs another's random stream."""
    names = ["diffusion", "schedule", "agent_init", "agent_train"]
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


@dataclass
class AgentTrainConfig:
    ppo: PpoConfig = field(default_factory=PpoConfig)
    total_steps: int = 25_600
    episode_length: int = 64


def train_ppo_on_schedule(prices: PriceTable, schedule: list[EpisodeSpec], env_config: EnvConfig,
                          cfg: AgentTrainConfig, seeds: dict, ddpm=None, stats=None) -> tuple[Agent, LearningCurve]:
    source = EpisodeSource(prices, schedule, env_config, cfg.episode_length, ddpm, stats)
    probe = PortfolioEnv(prices, env_config)
    agent = make_agent(probe.obs_dim, prices.n_assets, cfg.ppo, seed=seeds["agent_init"])
    curve = train_agent(source, agent, cfg.total_steps, seed=seeds["agent_train"])
    return agent, curve


def schedule_length(cfg: AgentTrainConfig) -> int:
    return cfg.total_steps // max(1, cfg.episode_length // 2) + 1


def train_plain(prices: PriceTable, env_config: EnvConfig, cfg: AgentTrainConfig, seed: int):
    """The no-augmentation agent: same schedule machinery with zero synthetic share."""
    seeds = stage_seeds(seed)
    starts = episode_starts(prices, env_config, cfg.episode_length)
    plan = AugmentationPlan(0.0, seed=seeds["schedule"])
    schedule = build_episode_schedule(plan, schedule_length(cfg), starts, np.random.default_rng(seeds["schedule"]))
    agent, curve = train_ppo_on_schedule(prices, schedule, env_config, cfg, seeds)
    return agent, curve, schedule


@dataclass
class DarlResult:
    agent: Agent
    ddpm: DdpmModel | None
    dataset: WindowDataset
    schedule: list[EpisodeSpec]
    curve: LearningCurve
    seeds: dict


def build_dataset(prices: PriceTable, length: int = 32, stride: int = 4) -> WindowDataset:
    return extract_windows(compute_returns(prices), length, stride, tickers=prices.tickers)


def train_diffusion(dataset: WindowDataset, config: DiffusionConfig) -> DdpmModel:
    x, c = dataset.arrays()
    return diffusion.train(x, c, config, stats=dataset.stats)


def darl_train(prices: PriceTable, diffusion_config: DiffusionConfig, agent_config: AgentTrainConfig,
               plan: AugmentationPlan, seed: int, env_config: EnvConfig | None = None,
               window_length: int = 32, stride: int = 4, ddpm: DdpmModel | None = None) -> DarlResult:
    """Windows -> DDPM -> episode schedule -> PPO over mixed episodes."""
    env_config = env_config or EnvConfig()
    seeds = stage_seeds(seed)
    dataset = build_dataset(prices, window_length, stride)
    log.info("dataset: %d windows, hash %s", len(dataset.samples), dataset.content_hash()[:12])
    if ddpm is None:
        cfg = DiffusionConfig(**{**asdict(diffusion_config), "seed": seeds["diffusion"]})
        ddpm = train_diffusion(dataset, cfg)
    starts = episode_starts(prices, env_config, agent_config.episode_length)
    schedule = build_episode_schedule(plan, schedule_length(agent_config), starts,
                                      np.random.default_rng(seeds["schedule"]))
    n_syn = sum(s.kind == "synthetic" for s in schedule)
    log.info("episode schedule: %d real, %d synthetic", len(schedule) - n_syn, n_syn)
    agent, curve = train_ppo_on_schedule(prices, schedule, env_config, agent_config, seeds, ddpm, dataset.stats)
    return DarlResult(agent, ddpm, dataset, schedule, curve, seeds)


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
