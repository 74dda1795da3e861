"""Equity-curve metrics, comparison tables and curve exports."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from darl.kernels import max_drawdown

log = logging.getLogger(__name__)

TRADING_DAYS = 252

COLUMNS = [
    ("cumulative_return", "Cumulative Return (%)", max),
    ("annualized_return", "Annualized Return (%)", max),
    ("sharpe", "Sharpe Ratio", max),
    ("calmar", "Calmar Ratio", max),
    ("annual_volatility", "Annual Volatility (%)", min),
    ("max_drawdown", "Maximum Drawdown (%)", max),
]

# canonical row order; names not listed keep insertion order before the index row
ROW_ORDER = ["DARL", "Proposed", "Without Augmentation", "FinRL-PPO", "OLMAR", "Hybrid-GA",
             "Markowitz", "Equal-Weight"]
INDEX_ROWS = ["Index"]


@dataclass
class EquityCurve:
    dates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.dates is None:
            self.dates = np.arange(len(self.values))
        self.dates = np.asarray(self.dates)
        if len(self.dates) != len(self.values):
            raise ValueError("dates and values differ in length")
        if np.any(self.values <= 0):
            raise ValueError("equity values must be positive")

    @property
    def returns(self) -> np.ndarray:
        return self.values[1:] / self.values[:-1] - 1.0


@dataclass
class PerfReport:
    cumulative_return: float  # percent
    annualized_return: float  # percent
    sharpe: float
    calmar: float
    annual_volatility: float  # percent
    max_drawdown: float  # percent, <= 0
    sharpe_undefined: bool = False

    def to_dict(self) -> dict:
        return {k: (v if not (isinstance(v, float) and math.isinf(v)) else "inf") for k, v in asdict(self).items()}


def calmar_ratio(annualized: float, mdd: float) -> float:
    return math.inf if mdd == 0 else annualized / abs(mdd)


def evaluate(curve: EquityCurve, periods: int = TRADING_DAYS, risk_free: float = 0.0) -> PerfReport:
    v = curve.values
    if v.size < 2:
        raise ValueError("need at least two equity points")
    cum = v[-1] / v[0] - 1.0
    with np.errstate(over="ignore"):  # absurd growth over a few points annualizes to inf
        ann = float(np.float64(1.0 + cum) ** (periods / (v.size - 1)) - 1.0)
    d = v[1:] / v[:-1] - 1.0 - risk_free / periods
    std = float(np.std(d, ddof=1)) if d.size > 1 else 0.0
    undefined = not std > 0.0
    if undefined:
        log.warning("zero-variance returns: Sharpe reported as 0")
    sharpe = 0.0 if undefined else float(np.mean(d) / std * np.sqrt(periods))
    mdd = max_drawdown(v)
    return PerfReport(
        cumulative_return=100.0 * cum,
        annualized_return=100.0 * ann,
        sharpe=sharpe,
        calmar=calmar_ratio(ann, mdd),
        annual_volatility=100.0 * std * np.sqrt(periods),
        max_drawdown=100.0 * mdd,
        sharpe_undefined=undefined,
    )


def cumulative_series(curve: EquityCurve) -> list[tuple]:
    v = curve.values
    return list(zip(curve.dates.tolist(), (v / v[0] - 1.0).tolist()))


def _row_rank(name: str, position: int) -> tuple:
    if name in INDEX_ROWS:
        return (2, INDEX_ROWS.index(name))
    if name in ROW_ORDER:
        return (0, ROW_ORDER.index(name))
    return (1, position)


@dataclass
class Comparison:
    rows: list[tuple[str, PerfReport]]
    best: dict[str, set[str]]  # column key -> names flagged best

    def to_dict(self) -> dict:
        return {
            "columns": [c[0] for c in COLUMNS],
            "rows": [{"name": n, **r.to_dict(), "best": sorted(k for k, s in self.best.items() if n in s)}
                     for n, r in self.rows],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def to_text(self) -> str:
        header = ["Model/Benchmark"] + [c[1] for c in COLUMNS]
        body = []
        for name, rep in self.rows:
            cells = [name]
            for key, _, _ in COLUMNS:
                val = getattr(rep, key)
                cell = "inf" if math.isinf(val) else f"{val:.4f}"
                cells.append(cell + ("*" if name in self.best[key] else ""))
            body.append(cells)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
        lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]
        return "\n".join(lines) + "\n(* best in column)\n"


def compare(reports: dict[str, PerfReport]) -> Comparison:
    if not reports:
        raise ValueError("nothing to compare")
    names = list(reports)
    ordered = sorted(names, key=lambda n: _row_rank(n, names.index(n)))
    best = {}
    for key, _, pick in COLUMNS:
        vals = {n: getattr(reports[n], key) for n in ordered}
        target = pick(vals.values())
        best[key] = {n for n, v in vals.items() if v == target}
    return Comparison([(n, reports[n]) for n in ordered], best)


def write_curves_csv(path, curves: dict[str, EquityCurve]) -> None:
    """Long format: strategy, date, value, cumulative."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "date", "value", "cumulative"])
        for name, curve in curves.items():
            for (date, cum), val in zip(cumulative_series(curve), curve.values):
                w.writerow([name, str(date), repr(float(val)), repr(cum)])
