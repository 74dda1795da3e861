"""Price ingestion, returns, covariances, indicators and diffusion windows."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from darl.kernels import ewma, max_drawdown, wilder_smooth

REAL = "real"
SYNTHETIC = "synthetic"

CRASH_REFERENCE_DRAWDOWN = 0.20

# neutral fill values for rows before an indicator's lookback is available
NEUTRAL = {"macd": 0.0, "rsi": 50.0, "cci": 0.0, "adx": 25.0}


class IngestionError(ValueError):
    pass


@dataclass
class PriceTable:
    dates: np.ndarray  # datetime64[D]
    tickers: list[str]
    closes: np.ndarray  # dates x assets
    origin: str = REAL
    rejected: tuple[str, ...] = ()

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.closes = np.asarray(self.closes, dtype=np.float64)
        if self.closes.ndim != 2 or self.closes.shape != (len(self.dates), len(self.tickers)):
            raise ValueError(
                f"closes shape {self.closes.shape} does not match "
                f"{len(self.dates)} dates x {len(self.tickers)} tickers"
            )
        if len(self.dates) > 1 and not np.all(np.diff(self.dates.astype(np.int64)) > 0):
            raise ValueError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.closes)) or np.any(self.closes <= 0):
            raise ValueError("closes must be finite and positive")

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    def __len__(self) -> int:
        return len(self.dates)

    def slice(self, start: int, stop: int) -> "PriceTable":
        return PriceTable(self.dates[start:stop], list(self.tickers), self.closes[start:stop], self.origin)

    def index_of(self, date) -> int:
        """Index of the last row dated on or before ``date``."""
        return int(np.searchsorted(self.dates, np.datetime64(date, "D"), side="right")) - 1


@dataclass
class ReturnMatrix:
    dates: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class CovarianceMatrix:
    values: np.ndarray
    as_of: np.datetime64


@dataclass
class IndicatorSet:
    dates: np.ndarray
    macd: np.ndarray
    rsi: np.ndarray
    cci: np.ndarray
    adx: np.ndarray

    def stacked(self) -> np.ndarray:
        """dates x 4 x assets array in the order MACD, RSI, CCI, ADX."""
        return np.stack([self.macd, self.rsi, self.cci, self.adx], axis=1)


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def standardize(self, returns):
        return (np.asarray(returns) - self.mean) / self.std

    def destandardize(self, z):
        return np.asarray(z) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class WindowSample:
    window: np.ndarray  # L x N, standardized
    intensity: float
    origin: tuple | str = SYNTHETIC  # (start date, end date) for real windows


@dataclass
class IngestConfig:
    max_missing: float = 0.10
    min_rows: int = 300
    min_assets: int = 2
    on_reject: str = "error"  # or "drop"


@dataclass
class WindowDataset:
    samples: list[WindowSample]
    stats: StandardizationStats
    length: int
    stride: int
    tickers: list[str] = field(default_factory=list)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([s.window for s in self.samples])
        c = np.array([s.intensity for s in self.samples])
        return x, c

    def content_hash(self) -> str:
        x, c = self.arrays()
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(x).tobytes())
        h.update(np.ascontiguousarray(c).tobytes())
        return h.hexdigest()

    def to_json(self, path) -> None:
        """Stats plus window index; the windows themselves are rebuilt from prices."""
        index = [
            {
                "start": str(s.origin[0]) if isinstance(s.origin, tuple) else None,
                "end": str(s.origin[1]) if isinstance(s.origin, tuple) else None,
                "intensity": s.intensity,
            }
            for s in self.samples
        ]
        payload = {
            "format_version": 1,
            "tickers": list(self.tickers),
            "window_length": self.length,
            "stride": self.stride,
            "stats": self.stats.to_dict(),
            "dataset_hash": self.content_hash(),
            "windows": index,
        }
        Path(path).write_text(json.dumps(payload, indent=2))


def load_csv(path, config: IngestConfig | None = None) -> PriceTable:
    """Read ``date,T1,...,TN`` daily closes, forward-filling gaps."""
    config = config or IngestConfig()
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise IngestionError(f"cannot parse {path}: {exc}") from exc
    if frame.columns.size == 0 or frame.columns[0].strip().lower() != "date":
        raise IngestionError(f"{path}: first column must be 'date'")
    try:
        dates = pd.to_datetime(frame.iloc[:, 0].str.strip(), format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise IngestionError(f"{path}: unparseable dates ({exc})") from exc
    tickers = [c.strip() for c in frame.columns[1:]]
    if len(tickers) < config.min_assets:
        raise IngestionError(f"{path}: need at least {config.min_assets} tickers, found {len(tickers)}")

    raw = frame.iloc[:, 1:].apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    values = raw.to_numpy(dtype=np.float64)
    order = np.argsort(dates.to_numpy(), kind="stable")
    values = values[order]
    dates = dates.to_numpy()[order].astype("datetime64[D]")
    if len(dates) > 1 and np.any(np.diff(dates.astype(np.int64)) == 0):
        raise IngestionError(f"{path}: duplicate dates")

    bad = ~np.isfinite(values) | (values <= 0)
    missing_frac = bad.mean(axis=0)
    rejected = [t for t, f in zip(tickers, missing_frac) if f > config.max_missing]
    if rejected:
        detail = ", ".join(f"{t} ({missing_frac[tickers.index(t)]:.0%} missing)" for t in rejected)
        if config.on_reject == "error":
            raise IngestionError(f"{path}: rejected by missing-data policy: {detail}")
        keep = [i for i, t in enumerate(tickers) if t not in rejected]
        tickers = [tickers[i] for i in keep]
        values, bad = values[:, keep], bad[:, keep]
        if len(tickers) < config.min_assets:
            raise IngestionError(f"{path}: fewer than {config.min_assets} tickers left after rejecting {detail}")

    values = np.where(bad, np.nan, values)
    filled = pd.DataFrame(values).ffill().to_numpy()
    # leading gaps cannot be forward-filled: drop those date rows
    keep_rows = np.all(np.isfinite(filled), axis=1)
    filled, dates = filled[keep_rows], dates[keep_rows]
    if len(dates) < config.min_rows:
        raise IngestionError(f"{path}: {len(dates)} usable date rows, need at least {config.min_rows}")

    # a single return has no spread to judge; the check needs two
    stds = np.std(np.diff(filled, axis=0) / filled[:-1], axis=0) if len(dates) > 2 else np.ones(len(tickers))
    flat = [t for t, s in zip(tickers, stds) if s == 0.0]
    if flat:
        raise IngestionError(f"{path}: zero-variance returns for {', '.join(flat)}")
    return PriceTable(dates, tickers, filled, REAL, tuple(rejected))


def compute_returns(prices: PriceTable) -> ReturnMatrix:
    closes = prices.closes
    return ReturnMatrix(prices.dates[1:], closes[1:] / closes[:-1] - 1.0)


def sample_covariance(block: np.ndarray) -> np.ndarray:
    """Sample covariance (n-1 denominator) of a rows x assets block, symmetrized."""
    block = np.asarray(block, dtype=np.float64)
    centered = block - block.mean(axis=0)
    s = centered.T @ centered / (block.shape[0] - 1)
    return 0.5 * (s + s.T)


def rolling_covariance(returns: ReturnMatrix, lookback: int = 60) -> list[CovarianceMatrix]:
    if lookback < 2:
        raise ValueError("lookback must be at least 2")
    if lookback > len(returns):
        raise ValueError(f"lookback {lookback} exceeds {len(returns)} return rows")
    vals = returns.values
    return [
        CovarianceMatrix(sample_covariance(vals[t - lookback + 1 : t + 1]), returns.dates[t])
        for t in range(lookback - 1, len(returns))
    ]


def _rsi(closes: np.ndarray, n: int = 14) -> np.ndarray:
    delta = np.diff(closes, axis=0)
    gains = np.vstack([np.zeros((1, closes.shape[1])), np.maximum(delta, 0.0)])
    losses = np.vstack([np.zeros((1, closes.shape[1])), np.maximum(-delta, 0.0)])
    avg_gain = wilder_smooth(gains, n, 1)
    avg_loss = wilder_smooth(losses, n, 1)
    rsi = np.full(closes.shape, NEUTRAL["rsi"])
    ok = np.isfinite(avg_gain)
    with np.errstate(divide="ignore", invalid="ignore"):
        rs = avg_gain / avg_loss
        val = 100.0 - 100.0 / (1.0 + rs)
    val = np.where(avg_loss == 0.0, np.where(avg_gain > 0.0, 100.0, 50.0), val)
    rsi[ok] = val[ok]
    return rsi


def _cci(closes: np.ndarray, n: int = 14) -> np.ndarray:
    # typical price reduces to the close under close-only ingestion
    cci = np.full(closes.shape, NEUTRAL["cci"])
    if closes.shape[0] < n:
        return cci
    win = np.lib.stride_tricks.sliding_window_view(closes, n, axis=0)  # rows-n+1 x N x n
    sma = win.mean(axis=2)
    mad = np.abs(win - sma[..., None]).mean(axis=2)
    dev = closes[n - 1 :] - sma
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(mad > 0.0, dev / (0.015 * mad), 0.0)
    cci[n - 1 :] = val
    return cci


def _adx(closes: np.ndarray, n: int = 14) -> np.ndarray:
    # no high/low available: true range is approximated by |close change|
    delta = np.vstack([np.zeros((1, closes.shape[1])), np.diff(closes, axis=0)])
    plus_dm = np.maximum(delta, 0.0)
    minus_dm = np.maximum(-delta, 0.0)
    tr = np.abs(delta)
    s_tr = wilder_smooth(tr, n, 1)
    s_plus = wilder_smooth(plus_dm, n, 1)
    s_minus = wilder_smooth(minus_dm, n, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        plus_di = np.where(s_tr > 0, 100.0 * s_plus / s_tr, 0.0)
        minus_di = np.where(s_tr > 0, 100.0 * s_minus / s_tr, 0.0)
        denom = plus_di + minus_di
        dx = np.where(denom > 0, 100.0 * np.abs(plus_di - minus_di) / denom, 0.0)
    adx = np.full(closes.shape, NEUTRAL["adx"])
    first_dx = n  # first row with a smoothed DI
    if closes.shape[0] <= first_dx:
        return adx
    smoothed = wilder_smooth(dx, n, first_dx)
    ok = np.isfinite(smoothed)
    adx[ok] = smoothed[ok]
    return adx


def compute_indicators(prices: PriceTable) -> IndicatorSet:
    """MACD(12, 26), RSI(14), CCI(14) and ADX(14) per date and asset."""
    closes = prices.closes
    if closes.shape[0] < 30:
        raise ValueError(f"need at least 30 rows of history for indicators, got {closes.shape[0]}")
    macd = ewma(closes, 2.0 / 13.0) - ewma(closes, 2.0 / 27.0)
    macd[:25] = NEUTRAL["macd"]
    return IndicatorSet(prices.dates, macd, _rsi(closes), _cci(closes), _adx(closes))


def label_crash_intensity(window, reference_drawdown: float = CRASH_REFERENCE_DRAWDOWN) -> float:
    """Clipped drawdown of an equal-weight buy-and-hold over a raw return window."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        window = window[:, None]
    if window.size == 0:
        raise ValueError("empty window")
    growth = np.cumprod(1.0 + window, axis=0).mean(axis=1)
    curve = np.concatenate([[1.0], growth])
    depth = -max_drawdown(curve)
    return float(min(1.0, depth / reference_drawdown))


def fit_stats(returns: np.ndarray) -> StandardizationStats:
    returns = np.asarray(returns, dtype=np.float64)
    std = returns.std(axis=0)
    if np.any(std <= 0):
        raise ValueError("zero-variance asset cannot be standardized")
    return StandardizationStats(returns.mean(axis=0), std)


def extract_windows(
    returns: ReturnMatrix,
    length: int = 32,
    stride: int = 4,
    stats: StandardizationStats | None = None,
    tickers: list[str] | None = None,
) -> WindowDataset:
    if length <= 0 or stride <= 0:
        raise ValueError("window length and stride must be positive")
    rows = len(returns)
    if length > rows:
        raise ValueError(f"window length {length} exceeds {rows} return rows")
    stats = stats or fit_stats(returns.values)
    z = stats.standardize(returns.values)
    samples = []
    for s in range(0, rows - length + 1, stride):
        raw = returns.values[s : s + length]
        samples.append(
            WindowSample(
                z[s : s + length].copy(),
                label_crash_intensity(raw),
                (returns.dates[s], returns.dates[s + length - 1]),
            )
        )
    return WindowDataset(samples, stats, length, stride, list(tickers or []))
