"""End-to-end acceptance criteria; each records one PASS/FAIL line in the terminal summary."""
import json
import time

import numpy as np
import pytest
from scipy import stats as sps

from darl import _pykernels, diffusion as d, nn
from darl.agent import PpoConfig
from darl.augmentation import AgentTrainConfig, AugmentationPlan, build_dataset, darl_train, train_diffusion, train_plain
from darl.backtest import calmar_ratio, evaluate, EquityCurve
from darl.baselines import markowitz_weights, olmar_update
from darl.cli import agent_curve, toy_csv_path
from darl.diffusion import DiffusionConfig
from darl.env import EnvConfig, PortfolioEnv, project_to_simplex
from darl.market_data import load_csv
from conftest import BACKENDS, MEMORIZED, PUBLISHED_RESULTS, TIMINGS, make_table, run_pipeline
from test_kernels import brute_projection
from test_nn import fd_gradient, max_rel_error


def test_criterion_01_metric_oracle(acceptance):
    t0 = time.perf_counter()
    mu, sigma, n = 0.0004, 0.01, 10_000
    log_returns = np.random.default_rng(2024).normal(mu, sigma, n)
    report = evaluate(EquityCurve(None, 100 * np.exp(np.cumsum(np.r_[0.0, log_returns]))))
    target = (mu / sigma) * np.sqrt(252)
    se = np.sqrt((1 + 0.5 * (mu / sigma) ** 2) / n) * np.sqrt(252)
    vol_rel = abs(report.annual_volatility / 100 / (sigma * np.sqrt(252)) - 1)
    elapsed = time.perf_counter() - t0
    ok = abs(report.sharpe - target) < 3 * se and vol_rel < 0.02 and elapsed < 1.0
    acceptance.record(1, ok, f"sharpe {report.sharpe:.4f} vs {target:.4f} (3se {3 * se:.4f}), "
                             f"vol rel err {vol_rel:.4f}, {elapsed:.3f}s")
    assert ok


def test_criterion_02_published_calmar(acceptance):
    errs = {name: abs(calmar_ratio(ann, mdd) / calmar - 1) for name, (_, ann, _, calmar, _, mdd) in PUBLISHED_RESULTS.items()}
    ok = max(errs.values()) < 0.005 and abs(calmar_ratio(34.7101, -15.7598) - 2.2024) < 1e-3
    acceptance.record(2, ok, f"max relative Calmar error {max(errs.values()):.2e} over {len(errs)} rows")
    assert ok


def test_criterion_03_gradients(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(20):
        depth = int(rng.integers(1, 4))
        sizes = [int(s) for s in rng.integers(1, 6, depth + 1)]
        net = nn.init_mlp(sizes, ["tanh", "relu", "linear"][k % 3], seed=k)
        for i in range(len(net.biases)):
            net.biases[i][...] = rng.normal(0, 0.5, net.biases[i].shape)
        x = rng.standard_normal((4, sizes[0]))
        g = rng.standard_normal((4, sizes[-1]))
        _, tape = nn.forward(net, x)
        analytic = np.concatenate([a.ravel() for a in nn.backward(net, tape, g)])
        worst = max(worst, max_rel_error(analytic, fd_gradient(net, x, g)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 10
    acceptance.record(3, ok, f"max relative error {worst:.2e} on 20 nets, {elapsed:.2f}s")
    assert ok


def test_criterion_04_schedule_and_marginals(acceptance):
    s = d.make_schedule(100)
    ok = s.beta[1] == 1e-4 and s.beta[100] == 0.02
    rng = np.random.default_rng(4)
    n, x0 = 10_000, -0.4
    x = np.full(n, x0)
    worst = 0.0
    for t in range(1, 101):
        x = d.forward_step(x, t, rng.standard_normal(n), s)
        if t in (1, 50, 100):
            var = 1 - s.alpha_bar[t]
            z_mean = abs(x.mean() - np.sqrt(s.alpha_bar[t]) * x0) / np.sqrt(var / n)
            z_var = abs(x.var(ddof=1) - var) / (var * np.sqrt(2 / (n - 1)))
            worst = max(worst, z_mean, z_var)
    ok = ok and worst < 3
    acceptance.record(4, ok, f"endpoints {s.beta[1]:g}/{s.beta[100]:g}; worst deviation {worst:.2f} SE")
    assert ok


def test_criterion_05_overfit(acceptance):
    t0 = time.perf_counter()
    model = d.train(np.repeat(MEMORIZED[None], 256, 0), np.full(256, 0.5), DiffusionConfig(T=20, epochs=500, seed=0))
    dev = float(np.abs(d.sample(model, 100, 0.5, seed=1).mean(axis=0) - MEMORIZED).max())
    elapsed = time.perf_counter() - t0
    ok = dev < 0.15 and elapsed < 120
    acceptance.record(5, ok, f"max elementwise deviation {dev:.4f}, {elapsed:.1f}s")
    assert ok


def test_criterion_06_conditioning(acceptance, two_regime):
    t0 = time.perf_counter()
    model, stats = two_regime

    def cum(c):
        r = stats.destandardize(d.sample(model, 200, c, seed=6))
        return np.prod(1 + r, axis=1).mean(axis=1) - 1  # equal-weight cumulative return per window

    crash, calm = cum(1.0), cum(0.0)
    p = sps.ttest_ind(crash, calm, equal_var=False, alternative="less").pvalue
    elapsed = time.perf_counter() - t0
    ok = crash.mean() < calm.mean() and p < 0.01 and elapsed < 300
    acceptance.record(6, ok, f"mean cum c=1 {crash.mean():.4f} vs c=0 {calm.mean():.4f}, Welch p={p:.1e}")
    assert ok


def test_criterion_07_ppo_oracle(acceptance, dominant_runs):
    finals = [w for _, _, w in dominant_runs]
    elapsed = TIMINGS["dominant_runs"]
    ok = sum(w > 0.8 for w in finals) >= 2 and elapsed < 300
    acceptance.record(7, ok, f"final weight on dominant asset {np.round(finals, 3).tolist()}, {elapsed:.1f}s")
    assert ok


def test_criterion_08_accounting(acceptance):
    rng = np.random.default_rng(8)
    worst = 0.0
    for episode in range(1000):
        n = int(rng.integers(1, 5))
        rets = np.clip(rng.normal(0, 0.03, (45, n)), -0.5, 1.0)
        closes = 100 * np.vstack([np.ones(n), np.cumprod(1 + rets, axis=0)])
        env = PortfolioEnv(make_table(closes), EnvConfig(cov_lookback=5, obs_window=3))
        env.reset(int(rng.integers(5, 35)), int(rng.integers(1, 10)))
        v = env.value
        while not env.done:
            w = project_to_simplex(rng.normal(0, 2, n))
            info = env.step(w).info
            expect = (1 - 0.0005 * info["turnover"]) * (1 + w @ env.day_returns[env.t])
            worst = max(worst, abs(info["value"] / v / expect - 1))
            v = info["value"]
    closes = np.full((35, 2), 100.0)
    env = PortfolioEnv(make_table(closes), EnvConfig(cov_lookback=2, obs_window=1))
    env.reset(32)
    env.holdings = np.array([1.0, 0.0])
    res = env.step([0.0, 1.0])
    hand = res.info["turnover"] == 2.0 and abs(res.info["cost"] - 1000.0) < 1e-9 and abs(res.reward + 0.001) < 1e-15
    ok = worst < 1e-12 and hand
    acceptance.record(8, ok, f"1000 episodes, max identity error {worst:.1e}; rebalance cost {res.info['cost']:.6f}")
    assert ok


def _hash(agent):
    import hashlib

    return hashlib.sha256(json.dumps(agent.to_dict()).encode()).hexdigest()


@pytest.fixture(scope="module")
def toy_train():
    prices = load_csv(toy_csv_path())
    return prices.slice(0, prices.index_of("2023-12-31") + 1)


def test_criterion_09_ablation_identity(acceptance, toy_train):
    cfg = AgentTrainConfig(total_steps=2048)
    darl = darl_train(toy_train, DiffusionConfig(epochs=3), cfg, AugmentationPlan(0.0), seed=9)
    plain, _, _ = train_plain(toy_train, EnvConfig(), cfg, seed=9)
    a, b = _hash(darl.agent), _hash(plain)
    acceptance.record(9, a == b, f"checkpoint sha256 {a[:16]} vs {b[:16]}")
    assert a == b


def test_criterion_10_drawdown_robustness(acceptance, toy_train):
    """Soft criterion: reported, never fails the suite."""
    prices = load_csv(toy_csv_path())
    start = int(np.searchsorted(prices.dates, np.datetime64("2024-01-01")))
    end = len(prices) - 1
    dataset = build_dataset(toy_train)
    ddpm = train_diffusion(dataset, DiffusionConfig(epochs=100, seed=10))
    cfg = AgentTrainConfig(total_steps=10_240)
    aug_mdd, plain_mdd = [], []
    for seed in range(5):
        res = darl_train(toy_train, DiffusionConfig(), cfg, AugmentationPlan(0.3, seed=seed), seed, ddpm=ddpm)
        plain, _, _ = train_plain(toy_train, EnvConfig(), cfg, seed)
        aug_mdd.append(evaluate(agent_curve(res.agent, prices, start, end, EnvConfig())).max_drawdown)
        plain_mdd.append(evaluate(agent_curve(plain, prices, start, end, EnvConfig())).max_drawdown)
    ok = np.mean(aug_mdd) >= np.mean(plain_mdd)  # drawdowns are negative: closer to 0 is better
    acceptance.record(10, ok, f"(soft) mean MDD augmented {np.mean(aug_mdd):.3f}% vs plain {np.mean(plain_mdd):.3f}%; "
                              f"augmented {np.round(aug_mdd, 3).tolist()} plain {np.round(plain_mdd, 3).tolist()}")


def test_criterion_11_baseline_oracles(acceptance):
    x = np.array([1.2, 0.8])
    tau = (10 - 0.5 * 1.2 - 0.5 * 0.8) / np.sum((x - x.mean()) ** 2)
    w = olmar_update([0.5, 0.5], x, 10.0)
    olmar_ok = abs(tau - 112.5) < 1e-9 and np.abs(w - [1.0, 0.0]).max() < 1e-9
    a = np.random.default_rng(11).normal(0.001, 0.01, 60)
    mk = markowitz_weights(np.column_stack([a, a[::-1]]), 10.0)
    mk_ok = np.abs(mk - 0.5).max() < 1e-6
    rng = np.random.default_rng(12)
    proj_ok = True
    for _ in range(1000):
        v = rng.normal(0, 2, int(rng.integers(1, 12)))
        oracle = brute_projection(v)
        for backend in BACKENDS:
            mod = backend.values[0]
            if mod is not None:
                proj_ok &= bool(np.array_equal(mod.simplex_projection(v), oracle))
    ok = olmar_ok and mk_ok and proj_ok
    acceptance.record(11, ok, f"OLMAR tau {tau:.9f} -> {w.tolist()}; Markowitz {mk.round(8).tolist()}; "
                              f"projection exact on 1000 vectors: {proj_ok}")
    assert ok


def test_criterion_12_end_to_end_determinism(acceptance, tmp_path):
    from pathlib import Path

    config = Path(__file__).resolve().parents[1] / "configs" / "toy.json"
    t0 = time.perf_counter()
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        codes = run_pipeline(config, out)
        runs.append((codes, json.loads((out / "manifest.json").read_text())))
    elapsed = time.perf_counter() - t0
    hashes = [{k: v["sha256"] for k, v in man["artifacts"].items()} for _, man in runs]
    ok = all(c == [0] * len(c) for c, _ in runs) and hashes[0] == hashes[1] and elapsed < 600
    rows = len(json.loads((tmp_path / "run0" / "report.json").read_text())["rows"])
    acceptance.record(12, ok, f"{len(hashes[0])} artifacts identical across runs: {hashes[0] == hashes[1]}; "
                              f"{rows} report rows; two runs in {elapsed:.0f}s")
    assert ok
