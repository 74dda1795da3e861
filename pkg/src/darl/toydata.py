"""Seeded synthetic markets for the bundled toy dataset and the test-suite."""
from __future__ import annotations

import numpy as np
import pandas as pd

from darl.market_data import PriceTable


def make_market(
    start: str = "2022-01-03",
    end: str = "2024-12-31",
    tickers=("AAA", "BBB", "CCC"),
    drift=(0.0006, 0.0004, 0.0002),
    vol=(0.014, 0.011, 0.008),
    corr: float = 0.5,
    crashes=(("2022-06-01", 15, -0.02), ("2024-08-01", 12, -0.02)),
    crash_betas=(1.4, 1.0, 0.5),
    seed: int = 7,
) -> PriceTable:
    """Correlated log-normal closes with drawdown episodes.

    Each crash is ``(first date, business days, mean daily return)`` and hits
    asset ``i`` with ``crash_betas[i]`` times the mean.
    """
    dates = pd.bdate_range(start, end).to_numpy().astype("datetime64[D]")
    n = len(tickers)
    rng = np.random.default_rng(seed)
    cov = corr * np.outer(vol, vol) + (1.0 - corr) * np.diag(np.square(vol))
    shocks = rng.multivariate_normal(np.zeros(n), cov, size=len(dates) - 1)
    rets = np.asarray(drift) + shocks
    for first, days, mean in crashes:
        i0 = int(np.searchsorted(dates, np.datetime64(first, "D"))) - 1
        if 0 <= i0 < len(rets):
            rets[i0 : i0 + days] += mean * np.asarray(crash_betas)
    rets = np.clip(rets, -0.5, 1.0)
    closes = 100.0 * np.vstack([np.ones(n), np.cumprod(1.0 + rets, axis=0)])
    return PriceTable(dates, list(tickers), np.round(closes, 4))


def write_csv(prices: PriceTable, path) -> None:
    frame = pd.DataFrame(prices.closes, columns=prices.tickers)
    frame.insert(0, "date", [str(d) for d in prices.dates])
    frame.to_csv(path, index=False, lineterminator="\n")
