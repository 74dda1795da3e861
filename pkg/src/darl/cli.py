"""Command-line pipeline: ingest, train-diffusion, sample, train-agent, backtest, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from darl import augmentation as aug
from darl import baselines, diffusion
from darl.agent import Agent, PpoConfig
from darl.backtest import EquityCurve, compare, evaluate, write_curves_csv
from darl.diffusion import DdpmModel, DiffusionConfig, NumericalError
from darl.env import EnvConfig, PortfolioEnv, run_episode
from darl.market_data import REAL, IngestConfig, IngestionError, PriceTable, load_csv
from darl.toydata import write_csv

log = logging.getLogger("darl")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

AGENT_ROWS = {"agent": ("agent.json", "DARL"), "noaug": ("agent_noaug.json", "Without Augmentation")}


class ConfigError(Exception):
    pass


class MissingPrerequisite(Exception):
    pass


def toy_csv_path() -> Path:
    return Path(str(resources.files("darl") / "data" / "toy_prices.csv"))


@dataclass
class RunConfig:
    prices: str = ""
    train_end: str = "2023-12-31"
    test_start: str = "2024-01-01"
    test_end: str = "2025-07-31"
    window_length: int = 32
    stride: int = 4
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    agent: aug.AgentTrainConfig = field(default_factory=aug.AgentTrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    augmentation: aug.AugmentationPlan = field(default_factory=aug.AugmentationPlan)
    baselines: list = field(default_factory=lambda: [
        {"variant": v} for v in ("MARKOWITZ", "OLMAR", "HYBRID_GA", "EQUAL_WEIGHT", "INDEX")])
    seed: int = 0
    output_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d = dict(d)
        try:
            if "diffusion" in d:
                dd = dict(d["diffusion"])
                if "hidden" in dd:
                    dd["hidden"] = tuple(dd["hidden"])
                d["diffusion"] = DiffusionConfig(**dd)
            if "agent" in d:
                ad = dict(d["agent"])
                ppo = dict(ad.pop("ppo", {}))
                if "hidden" in ppo:
                    ppo["hidden"] = tuple(ppo["hidden"])
                d["agent"] = aug.AgentTrainConfig(ppo=PpoConfig(**ppo), **ad)
            if "env" in d:
                d["env"] = EnvConfig(**d["env"])
            if "augmentation" in d:
                d["augmentation"] = aug.AugmentationPlan(**d["augmentation"])
            cfg = cls(**d)
            for b in cfg.baselines:
                baselines.StrategyConfig(**b)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if not cfg.prices:
            cfg.prices = str(toy_csv_path())
        elif base is not None and not Path(cfg.prices).is_absolute():
            cfg.prices = str((base / cfg.prices).resolve())
        if not np.datetime64(cfg.train_end) < np.datetime64(cfg.test_start) <= np.datetime64(cfg.test_end):
            raise ConfigError("split dates must satisfy train_end < test_start <= test_end")
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


class Manifest:
    """Content hashes of every artifact, keyed by path relative to the run directory."""

    def __init__(self, out: Path):
        self.out = out
        self.path = out / "manifest.json"
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {"artifacts": {}, "stages": {}}

    def record(self, stage: str, paths, **meta) -> None:
        for p in paths:
            rel = str(Path(p).relative_to(self.out))
            self.data["artifacts"][rel] = {"sha256": aug.file_hash(p), "stage": stage}
        self.data["stages"][stage] = {"outputs": sorted(str(Path(p).relative_to(self.out)) for p in paths), **meta}
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True))

    def require(self, rel: str, hint: str) -> Path:
        entry = self.data["artifacts"].get(rel)
        p = self.out / rel
        if entry is None or not p.exists():
            raise MissingPrerequisite(f"missing prerequisite {p} (run `{hint}` first)")
        if aug.file_hash(p) != entry["sha256"]:
            raise MissingPrerequisite(f"stale prerequisite {p}: content differs from manifest (re-run `{hint}`)")
        return p


def _load_config(args) -> RunConfig:
    d = {}
    base = None
    if args.config:
        cpath = Path(args.config)
        if not cpath.exists():
            raise ConfigError(f"config file not found: {cpath}")
        try:
            d = json.loads(cpath.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{cpath}: invalid JSON ({exc})") from exc
        base = cpath.parent
    if getattr(args, "prices", None):
        d["prices"] = args.prices
        base = None
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out:
        d["output_dir"] = args.out
    return RunConfig.from_dict(d, base)


def _train_prices(prices: PriceTable, cfg: RunConfig) -> PriceTable:
    end = prices.index_of(cfg.train_end)
    if end < 1:
        raise ConfigError(f"no data on or before train_end {cfg.train_end}")
    return prices.slice(0, end + 1)


def _test_range(prices: PriceTable, cfg: RunConfig) -> tuple[int, int]:
    start = int(np.searchsorted(prices.dates, np.datetime64(cfg.test_start, "D")))
    end = prices.index_of(cfg.test_end)
    if start >= len(prices) or end <= start:
        raise ConfigError(f"test split {cfg.test_start}..{cfg.test_end} is outside the data range")
    need = max(cfg.env.cov_lookback, cfg.env.obs_window)
    if start < need:
        raise ConfigError(f"test split starts at row {start}; need {need} rows of history before it")
    return start, end


def _read_prices(man: Manifest) -> PriceTable:
    p = man.require("prices.csv", "darl ingest")
    meta = man.data["stages"].get("ingest", {})
    table = load_csv(p, IngestConfig(min_rows=1))
    table.origin = meta.get("origin", REAL)
    return table


def cmd_ingest(args, cfg: RunConfig, man: Manifest) -> int:
    src = Path(cfg.prices)
    if not src.exists():
        raise MissingPrerequisite(f"price file not found: {src}")
    prices = load_csv(src, IngestConfig(on_reject="drop"))
    out = man.out
    write_csv(prices, out / "prices.csv")
    train = _train_prices(prices, cfg)
    dataset = aug.build_dataset(train, cfg.window_length, cfg.stride)
    dataset.to_json(out / "dataset.json")
    summary = {
        "source": src.name,
        "assets": prices.tickers,
        "rejected": list(prices.rejected),
        "first_date": str(prices.dates[0]),
        "last_date": str(prices.dates[-1]),
        "rows": len(prices),
        "train_rows": len(train),
        "windows": len(dataset.samples),
        "mean_intensity": float(np.mean([s.intensity for s in dataset.samples])),
    }
    (out / "ingest_summary.json").write_text(json.dumps(summary, indent=2))
    man.record("ingest", [out / "prices.csv", out / "dataset.json", out / "ingest_summary.json"], origin=REAL)
    print(f"ingested {len(prices)} rows x {prices.n_assets} assets ({', '.join(prices.tickers)})")
    print(f"rejected: {', '.join(prices.rejected) if prices.rejected else 'none'}")
    print(f"{len(dataset.samples)} diffusion windows from {len(train)} training rows")
    return EXIT_OK


def cmd_train_diffusion(args, cfg: RunConfig, man: Manifest) -> int:
    prices = _read_prices(man)
    seeds = aug.stage_seeds(cfg.seed)
    dataset = aug.build_dataset(_train_prices(prices, cfg), cfg.window_length, cfg.stride)
    dcfg = DiffusionConfig(**{**asdict(cfg.diffusion), "seed": seeds["diffusion"]})
    model = aug.train_diffusion(dataset, dcfg)
    out = man.out
    model.save(out / "ddpm.json")
    with open(out / "diffusion_loss.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, l in enumerate(model.meta["losses"]):
            fh.write(f"{i},{l!r}\n")
    man.record("train-diffusion", [out / "ddpm.json", out / "diffusion_loss.csv"], seed=dcfg.seed,
               dataset_hash=dataset.content_hash())
    print(f"trained DDPM on {len(dataset.samples)} windows; final loss {model.meta['losses'][-1]:.4f}"
          if model.meta["losses"] else "DDPM initialized (0 epochs)")
    return EXIT_OK


def cmd_sample(args, cfg: RunConfig, man: Manifest) -> int:
    model = DdpmModel.load(man.require("ddpm.json", "darl train-diffusion"))
    seed = cfg.seed
    windows = diffusion.sample(model, args.count, args.intensity, seed)
    path = man.out / f"samples_c{args.intensity:g}_n{args.count}_s{seed}.csv"
    diffusion.write_samples_csv(path, windows, args.intensity)
    man.record(f"sample:{path.name}", [path], seed=seed, intensity=args.intensity, count=args.count)
    cum = np.cumsum(model.stats.destandardize(windows).mean(axis=2), axis=1)[:, -1] if model.stats else None
    print(f"wrote {args.count} windows to {path.name}"
          + (f"; mean cumulative return {np.mean(cum):.4f}" if cum is not None else ""))
    return EXIT_OK


def cmd_train_agent(args, cfg: RunConfig, man: Manifest) -> int:
    prices = _read_prices(man)
    train = _train_prices(prices, cfg)
    out = man.out
    if args.no_augment:
        agent, curve, schedule = aug.train_plain(train, cfg.env, cfg.agent, cfg.seed)
        name, stage = "agent_noaug", "train-agent:noaug"
    else:
        ddpm = DdpmModel.load(man.require("ddpm.json", "darl train-diffusion"))
        res = aug.darl_train(train, cfg.diffusion, cfg.agent, cfg.augmentation, cfg.seed, cfg.env,
                             cfg.window_length, cfg.stride, ddpm=ddpm)
        agent, curve, schedule = res.agent, res.curve, res.schedule
        name, stage = "agent", "train-agent"
        cfg.augmentation.to_json(out / "plan.json")
    agent.save(out / f"{name}.json")
    curve.to_csv(out / f"{name}_learning_curve.csv")
    (out / f"{name}_schedule.json").write_text(json.dumps([asdict(s) for s in schedule]))
    paths = [out / f"{name}.json", out / f"{name}_learning_curve.csv", out / f"{name}_schedule.json"]
    if not args.no_augment:
        paths.append(out / "plan.json")
    man.record(stage, paths, seed=cfg.seed, synthetic_episodes=sum(s.kind == "synthetic" for s in schedule))
    print(f"trained {name} for {cfg.agent.total_steps} steps over {len(schedule)} scheduled episodes")
    return EXIT_OK


def agent_curve(agent: Agent, prices: PriceTable, start: int, end: int, env_config: EnvConfig) -> EquityCurve:
    if prices.origin != REAL:
        raise ValueError("backtests accept real price data only")
    env = PortfolioEnv(prices, env_config)
    traj = run_episode(env, agent.policy.weights, start, end - start)
    return traj.equity_curve()


def cmd_backtest(args, cfg: RunConfig, man: Manifest) -> int:
    prices = _read_prices(man)
    if prices.origin != REAL:
        raise ConfigError("refusing to backtest on synthetic-origin price data")
    start, end = _test_range(prices, cfg)
    wanted = args.strategy
    names = []
    if wanted in ("all", "agent"):
        names.append("agent")
    if wanted in ("all", "noaug"):
        names.append("noaug")
    variants = [b for b in cfg.baselines if wanted == "all" or b["variant"] == wanted.upper()]
    if wanted not in ("all", "agent", "noaug") and not variants:
        raise ConfigError(f"unknown strategy {wanted!r}")
    curves = {}
    for key in names:
        fname, label = AGENT_ROWS[key]
        if key == "noaug" and wanted == "all" and fname not in man.data["artifacts"]:
            log.info("no ablation agent trained; skipping %s", label)
            continue
        hint = "darl train-agent" + (" --no-augment" if key == "noaug" else "")
        agent = Agent.load(man.require(fname, hint))
        curves[label] = agent_curve(agent, prices, start, end, cfg.env)
    for b in variants:
        sc = baselines.StrategyConfig(**b)
        curves[baselines.DISPLAY_NAMES[sc.variant]] = baselines.run_strategy(sc, prices, start, end, cfg.env)
    out = man.out / "backtest"
    out.mkdir(exist_ok=True)
    paths = []
    results = {}
    for label, curve in curves.items():
        p = out / f"{label.replace(' ', '_').lower()}_curve.csv"
        write_curves_csv(p, {label: curve})
        paths.append(p)
        results[label] = {"curve": p.name, "report": evaluate(curve).to_dict()}
        if label not in ("DARL", "Without Augmentation", "Index", "Equal-Weight"):
            results[label]["note"] = "reimplementation"
    rp = out / f"results_{wanted.lower()}.json"
    rp.write_text(json.dumps(results, indent=2))
    paths.append(rp)
    man.record(f"backtest:{wanted}", paths, test_start=str(prices.dates[start]), test_end=str(prices.dates[end]))
    for label, r in results.items():
        rep = r["report"]
        print(f"{label:22s} cum {rep['cumulative_return']:8.3f}%  sharpe {rep['sharpe']:6.3f}  mdd {rep['max_drawdown']:8.3f}%")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig, man: Manifest) -> int:
    from darl.backtest import PerfReport

    stage_outputs = [o for s, m in sorted(man.data["stages"].items()) if s.startswith("backtest:")
                     for o in m["outputs"] if Path(o).name.startswith("results_")]
    if not stage_outputs:
        raise MissingPrerequisite(f"missing prerequisite {man.out / 'backtest' / 'results_all.json'} "
                                  "(run `darl backtest` first)")
    results = {}
    for rel in stage_outputs:
        results.update(json.loads(man.require(rel, "darl backtest").read_text()))
    reports, curves = {}, {}
    for label, r in results.items():
        rep = {k: (float("inf") if v == "inf" else v) for k, v in r["report"].items()}
        reports[label] = PerfReport(**rep)
        curve_path = man.require(f"backtest/{r['curve']}", "darl backtest")
        rows = np.genfromtxt(curve_path, delimiter=",", skip_header=1, dtype=str)
        rows = np.atleast_2d(rows)
        curves[label] = EquityCurve(rows[:, 1].astype("datetime64[D]"), rows[:, 2].astype(float))
    table = compare(reports)
    out = man.out
    (out / "report.txt").write_text(table.to_text())
    table.to_json(out / "report.json")
    write_curves_csv(out / "cumulative_curves.csv", curves)
    man.record("report", [out / "report.txt", out / "report.json", out / "cumulative_curves.csv"])
    print(table.to_text())
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "train-diffusion": cmd_train_diffusion,
    "sample": cmd_sample,
    "train-agent": cmd_train_agent,
    "backtest": cmd_backtest,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (omitted fields take defaults)")
    common.add_argument("--seed", type=int, help="global seed override")
    common.add_argument("--out", help="output directory override")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="darl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", parents=[common], help="validate prices and build the window dataset")
    p.add_argument("--prices", help="price CSV (defaults to config or the bundled toy data)")
    sub.add_parser("train-diffusion", parents=[common], help="train the conditional DDPM")
    p = sub.add_parser("sample", parents=[common], help="generate windows at a crash intensity")
    p.add_argument("--intensity", type=float, default=1.0)
    p.add_argument("--count", type=int, default=10)
    p = sub.add_parser("train-agent", parents=[common], help="train the PPO agent")
    p.add_argument("--no-augment", action="store_true", help="train the no-augmentation ablation")
    p = sub.add_parser("backtest", parents=[common], help="evaluate strategies on the test split")
    p.add_argument("--strategy", default="all", help="all, agent, noaug, or a baseline variant")
    sub.add_parser("report", parents=[common], help="emit comparison table and cumulative curves")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        try:
            with FileLock(str(out / ".lock"), timeout=0):
                return COMMANDS[args.command](args, cfg, Manifest(out))
        except Timeout:
            raise ConfigError(f"another darl command holds the lock on {out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingPrerequisite, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
