"""Comparison strategies: Markowitz, OLMAR, hybrid GA, index and equal weight.

All strategies trade through ``PortfolioEnv`` so they pay exactly the same
transaction costs as the agent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from darl.backtest import EquityCurve
from darl.env import EnvConfig, PortfolioEnv, check_weights
from darl.kernels import simplex_projection
from darl.market_data import REAL, PriceTable, sample_covariance

MARKOWITZ = "MARKOWITZ"
OLMAR = "OLMAR"
HYBRID_GA = "HYBRID_GA"
INDEX = "INDEX"
EQUAL_WEIGHT = "EQUAL_WEIGHT"
VARIANTS = (MARKOWITZ, OLMAR, HYBRID_GA, INDEX, EQUAL_WEIGHT)

DISPLAY_NAMES = {MARKOWITZ: "Markowitz", OLMAR: "OLMAR", HYBRID_GA: "Hybrid-GA",
                 INDEX: "Index", EQUAL_WEIGHT: "Equal-Weight"}


@dataclass
class GaParams:
    population: int = 50
    generations: int = 30
    mutation_sigma: float = 0.05
    tournament: int = 3
    refine_steps: int = 100
    refine_lr: float = 0.01

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("GA population must be at least 4")


@dataclass
class StrategyConfig:
    variant: str
    lookback: int = 60
    risk_aversion: float = 10.0
    olmar_eps: float = 10.0
    olmar_window: int = 5
    ga: GaParams = field(default_factory=GaParams)
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown strategy {self.variant!r}")
        if self.lookback < 2:
            raise ValueError("lookback must be at least 2")
        if isinstance(self.ga, dict):
            self.ga = GaParams(**self.ga)


def markowitz_weights(block, risk_aversion: float = 10.0, iterations: int = 500, step: float = 0.01,
                      periods_per_year: int = 1) -> np.ndarray:
    """Projected gradient ascent on mu'w - lambda w'Sigma w over the simplex.

    ``periods_per_year`` rescales both moments; the maximizer is unchanged but
    the fixed step then works on annual rather than daily magnitudes.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.shape[0] < 2:
        raise ValueError("need at least two return rows")
    n = block.shape[1]
    mu = block.mean(axis=0) * periods_per_year
    sigma = (sample_covariance(block) + 1e-6 * np.eye(n)) * periods_per_year
    w = np.full(n, 1.0 / n)
    for _ in range(iterations):
        w = simplex_projection(w + step * (mu - 2.0 * risk_aversion * sigma @ w))
    return w


def olmar_update(weights, predicted_relatives, eps: float = 10.0) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    x = np.asarray(predicted_relatives, dtype=np.float64)
    dev = x - x.mean()
    denom = float(dev @ dev)
    tau = 0.0 if denom < 1e-12 else max(0.0, (eps - float(w @ x)) / denom)
    if tau == 0.0:
        return w.copy()
    return simplex_projection(w + tau * dev)


def olmar_weights(weights, price_block, eps: float = 10.0, window: int = 5) -> np.ndarray:
    """One OLMAR step; ``price_block`` rows end at the current close."""
    prices = np.asarray(price_block, dtype=np.float64)
    if prices.shape[0] < window:
        raise ValueError(f"moving-average window {window} exceeds {prices.shape[0]} price rows")
    x = prices[-window:].mean(axis=0) / prices[-1]
    return olmar_update(weights, x, eps)


def _sharpe(block: np.ndarray, pop: np.ndarray) -> np.ndarray:
    port = block @ pop.T  # rows x individuals
    std = port.std(axis=0, ddof=1)
    mean = port.mean(axis=0)
    out = np.zeros(pop.shape[0])
    ok = std > 1e-12
    out[ok] = mean[ok] / std[ok] * np.sqrt(252.0)
    return out


def hybrid_ga_weights(block, params: GaParams | None = None, seed: int = 0,
                      initial_population=None) -> np.ndarray:
    """Genetic search for the max in-sample Sharpe portfolio, then gradient polish."""
    params = params or GaParams()
    block = np.asarray(block, dtype=np.float64)
    if block.shape[0] < 2:
        raise ValueError("need at least two return rows")
    rng = np.random.default_rng(seed)
    n = block.shape[1]
    if initial_population is None:
        pop = rng.dirichlet(np.ones(n), size=params.population)
    else:
        pop = np.array(initial_population, dtype=np.float64)
    size = pop.shape[0]
    fit = _sharpe(block, pop)
    for _ in range(params.generations):
        elite = pop[np.argmax(fit)].copy()
        children = [elite]
        while len(children) < size:
            parents = []
            for _ in range(2):
                cand = rng.integers(0, size, params.tournament)
                parents.append(pop[cand[np.argmax(fit[cand])]])
            beta = rng.uniform()
            child = beta * parents[0] + (1.0 - beta) * parents[1]
            if params.mutation_sigma > 0:
                child = child + rng.normal(0.0, params.mutation_sigma, n)
            children.append(simplex_projection(child))
        pop = np.array(children)
        fit = _sharpe(block, pop)
    best = pop[np.argmax(fit)]
    return _refine_sharpe(block, best, params.refine_steps, params.refine_lr)


def _refine_sharpe(block, w, steps: int, lr: float) -> np.ndarray:
    """Projected gradient ascent on Sharpe, keeping only improving steps."""
    mu = block.mean(axis=0)
    cov = sample_covariance(block)
    cur = float(_sharpe(block, w[None])[0])
    for _ in range(steps):
        var = float(w @ cov @ w)
        if var <= 1e-24:
            break
        s = np.sqrt(var)
        grad = (mu / s - float(mu @ w) * (cov @ w) / s**3) * np.sqrt(252.0)
        cand = simplex_projection(w + lr * grad)
        val = float(_sharpe(block, cand[None])[0])
        if val <= cur:
            break
        w, cur = cand, val
    return w


def index_curve(prices: PriceTable, index_series=None, start: int = 0, end: int | None = None) -> EquityCurve:
    """Buy-and-hold of a supplied index, else a price-weighted basket (Dow style)."""
    end = len(prices) - 1 if end is None else end
    dates = prices.dates[start : end + 1]
    if index_series is not None:
        level = np.asarray(index_series, dtype=np.float64)[start : end + 1]
    else:
        level = prices.closes[start : end + 1].sum(axis=1)
    return EquityCurve(dates, level / level[0])


WeightFn = Callable[[int, np.ndarray], np.ndarray]


def _weight_fn(config: StrategyConfig, prices: PriceTable) -> WeightFn:
    """Map (index t, current holdings) to target weights using rows <= t only."""
    closes = prices.closes
    rets = np.vstack([np.zeros((1, prices.n_assets)), closes[1:] / closes[:-1] - 1.0])
    lb = config.lookback
    v = config.variant
    if v == EQUAL_WEIGHT:
        n = prices.n_assets
        return lambda t, held: np.full(n, 1.0 / n)
    if v == MARKOWITZ:
        return lambda t, held: markowitz_weights(rets[t - lb + 1 : t + 1], config.risk_aversion,
                                                 periods_per_year=252)
    if v == OLMAR:
        state = {}

        def olmar(t, held):
            prev = state.get("w", held)
            state["w"] = olmar_weights(prev, closes[: t + 1], config.olmar_eps, config.olmar_window)
            return state["w"]

        return olmar
    if v == HYBRID_GA:
        return lambda t, held: hybrid_ga_weights(rets[t - lb + 1 : t + 1], config.ga, seed=config.seed + t)
    raise ValueError(f"{v} is not a rebalancing strategy")


def run_strategy(config: StrategyConfig, prices: PriceTable, start: int, end: int | None = None,
                 env_config: EnvConfig | None = None) -> EquityCurve:
    """Daily rebalancing from index ``start`` through ``end`` (inclusive) via env accounting."""
    if prices.origin != REAL:
        raise ValueError("backtests accept real price data only")
    end = len(prices) - 1 if end is None else end
    env_config = env_config or EnvConfig()
    if config.variant == INDEX:
        curve = index_curve(prices, start=start, end=end)
        return EquityCurve(curve.dates, curve.values * env_config.initial_capital)
    env = PortfolioEnv(prices, env_config)
    env.reset(start, end - start)
    fn = _weight_fn(config, prices)
    dates, values = [prices.dates[start]], [env.value]
    while not env.done:
        w = check_weights(fn(env.t, env.holdings.copy()))
        info = env.step(w).info
        dates.append(info["date"])
        values.append(info["value"])
    return EquityCurve(np.asarray(dates), np.asarray(values))
