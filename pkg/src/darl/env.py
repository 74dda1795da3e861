"""Portfolio MDP with proportional transaction costs."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from darl.market_data import PriceTable, compute_indicators, sample_covariance

# observation scaling: returns in percent, covariance in percent^2,
# MACD relative to price, oscillators divided by 100
RETURN_SCALE = 100.0
COV_SCALE = 1e4


@dataclass
class EnvConfig:
    initial_capital: float = 1_000_000.0
    cost_rate: float = 0.0005
    cov_lookback: int = 60
    obs_window: int = 8

    def __post_init__(self):
        if self.initial_capital <= 0:
            raise ValueError("initial capital must be positive")
        if not 0.0 <= self.cost_rate < 1.0:
            raise ValueError("cost rate must lie in [0, 1)")
        if self.cov_lookback < 2 or self.obs_window < 1:
            raise ValueError("covariance lookback must be >= 2 and observation window >= 1")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


@dataclass
class Trajectory:
    observations: list[np.ndarray] = field(default_factory=list)
    actions: list[np.ndarray] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)  # portfolio value, first entry = V at reset
    infos: list[dict] = field(default_factory=list)
    dates: list = field(default_factory=list)

    def equity_curve(self):
        from darl.backtest import EquityCurve

        return EquityCurve(np.asarray(self.dates, dtype="datetime64[D]"), np.asarray(self.values))

    def to_csv(self, path) -> None:
        n = len(self.actions[0]) if self.actions else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date_index", "date", "value", "reward", "turnover", "cost"] + [f"w{i}" for i in range(n)])
            for info, r, a in zip(self.infos, self.rewards, self.actions):
                w.writerow([info["date_index"], str(info["date"]), repr(info["value"]), repr(r),
                            repr(info["turnover"]), repr(info["cost"])] + [repr(float(x)) for x in a])


def project_to_simplex(raw) -> np.ndarray:
    """Softmax map from unbounded raw actions onto portfolio weights."""
    raw = np.asarray(raw, dtype=np.float64)
    e = np.exp(raw - raw.max())
    return e / e.sum()


def check_weights(w, tol: float = 1e-9) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0) or abs(w.sum() - 1.0) > tol or not np.all(np.isfinite(w)):
        raise ValueError(f"weights must be non-negative and sum to 1, got {w}")
    return w


class PortfolioEnv:
    """Daily rebalancing at the close the observation is formed from.

    Price index ``t`` carries the return realized on that day,
    ``R[t] = p[t] / p[t-1] - 1``. An episode starting at ``t0`` holds equal
    weights and may act until the price path (or requested length) ends.
    """

    def __init__(self, prices: PriceTable, config: EnvConfig | None = None):
        self.prices = prices
        self.config = config or EnvConfig()
        closes = prices.closes
        n = prices.n_assets
        self.day_returns = np.vstack([np.zeros((1, n)), closes[1:] / closes[:-1] - 1.0])
        ind = compute_indicators(prices)
        feats = np.stack([ind.macd / closes, ind.rsi / 100.0, ind.cci / 100.0, ind.adx / 100.0], axis=1)
        self._indicator_features = feats  # dates x 4 x N
        self._iu = np.triu_indices(n)
        self.t = None
        self.done = True

    @property
    def n_assets(self) -> int:
        return self.prices.n_assets

    @property
    def obs_dim(self) -> int:
        n = self.n_assets
        return self.config.obs_window * n + n * (n + 1) // 2 + 4 * n + n

    @property
    def min_start(self) -> int:
        return max(self.config.cov_lookback, self.config.obs_window)

    def observation(self, t: int, weights) -> np.ndarray:
        """State at index ``t``; uses rows ``<= t`` only."""
        c = self.config
        recent = self.day_returns[t - c.obs_window + 1 : t + 1] * RETURN_SCALE
        cov = sample_covariance(self.day_returns[t - c.cov_lookback + 1 : t + 1]) * COV_SCALE
        return np.concatenate([recent.ravel(), cov[self._iu], self._indicator_features[t].ravel(),
                               np.asarray(weights, dtype=np.float64)])

    def reset(self, start: int, length: int | None = None, seed: int | None = None) -> np.ndarray:
        last = len(self.prices) - 1
        if start < self.min_start:
            raise ValueError(
                f"start index {start} leaves too little history: need {self.min_start} rows "
                f"(covariance lookback {self.config.cov_lookback})"
            )
        if start >= last:
            raise ValueError(f"start index {start} leaves no step ahead (last index {last})")
        self.t = start
        self.end = last if length is None else min(last, start + length)
        self.value = float(self.config.initial_capital)
        n = self.n_assets
        self.holdings = np.full(n, 1.0 / n)  # drifted weights currently held
        self.done = False
        return self.observation(self.t, self.holdings)

    def step(self, action) -> StepResult:
        if self.done:
            raise RuntimeError("step called on a finished episode; call reset first")
        w = check_weights(action)
        turnover = float(np.abs(w - self.holdings).sum())
        cost = self.config.cost_rate * self.value * turnover
        r_next = self.day_returns[self.t + 1]
        growth = 1.0 + float(w @ r_next)
        v_new = (self.value - cost) * growth
        reward = (v_new - self.value) / self.value
        self.holdings = w * (1.0 + r_next) / growth
        self.value = v_new
        self.t += 1
        self.done = self.t >= self.end
        info = {"value": v_new, "turnover": turnover, "cost": cost, "date_index": self.t,
                "date": self.prices.dates[self.t], "growth": growth}
        return StepResult(self.observation(self.t, self.holdings), reward, self.done, info)


Policy = Callable[[np.ndarray], np.ndarray]


def run_episode(env: PortfolioEnv, policy: Policy, start: int, length: int | None = None) -> Trajectory:
    """Roll ``policy`` (observation -> weights) from ``start``."""
    obs = env.reset(start, length)
    traj = Trajectory(values=[env.value], dates=[env.prices.dates[start]])
    while not env.done:
        w = check_weights(policy(obs))
        res = env.step(w)
        traj.observations.append(obs)
        traj.actions.append(w)
        traj.rewards.append(res.reward)
        traj.values.append(res.info["value"])
        traj.dates.append(res.info["date"])
        traj.infos.append(res.info)
        obs = res.observation
    return traj
