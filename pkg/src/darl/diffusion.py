"""Conditional DDPM over standardized return windows."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from darl import nn
from darl.market_data import StandardizationStats

log = logging.getLogger(__name__)

BETA_START = 1e-4
BETA_END = 0.02
EMBED_DIM = 16
RETURN_CLIP = (-0.5, 1.0)


class NumericalError(RuntimeError):
    pass


@dataclass
class NoiseSchedule:
    """Arrays are indexed by step ``t`` directly; slot 0 holds the t=0 convention
    (beta 0, alpha 1, alpha_bar 1, tilde_beta 0)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    tilde_beta: np.ndarray


def make_schedule(T: int = 100, beta_start: float = BETA_START, beta_end: float = BETA_END) -> NoiseSchedule:
    if T < 1:
        raise ValueError("need at least one diffusion step")
    beta = np.zeros(T + 1)
    if T == 1:
        beta[1] = beta_start
    else:
        beta[1:] = beta_start + (np.arange(T) / (T - 1)) * (beta_end - beta_start)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    tilde_beta = np.zeros(T + 1)
    tilde_beta[1:] = beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
    return NoiseSchedule(T, beta, alpha, alpha_bar, tilde_beta)


def timestep_embedding(t, dim: int = EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding, rows = len(t), half sines then half cosines."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class DiffusionConfig:
    T: int = 100
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    hidden: tuple[int, ...] = (128, 128)
    activation: str = "tanh"
    seed: int = 0


@dataclass
class DdpmModel:
    net: nn.Mlp
    schedule: NoiseSchedule
    window_shape: tuple[int, int]
    stats: StandardizationStats | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.window_shape[0] * self.window_shape[1]

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "net": self.net.to_dict(),
            "schedule": {"T": self.schedule.T, "beta_start": float(self.schedule.beta[1]),
                         "beta_end": float(self.schedule.beta[-1])},
            "window_shape": list(self.window_shape),
            "stats": self.stats.to_dict() if self.stats is not None else None,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DdpmModel":
        s = d["schedule"]
        stats = StandardizationStats.from_dict(d["stats"]) if d.get("stats") else None
        return cls(nn.Mlp.from_dict(d["net"]), make_schedule(s["T"], s["beta_start"], s["beta_end"]),
                   tuple(d["window_shape"]), stats, d.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "DdpmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_model(window_shape, config: DiffusionConfig | None = None, stats=None) -> DdpmModel:
    config = config or DiffusionConfig()
    L, N = window_shape
    d = L * N
    net = nn.init_mlp([d + EMBED_DIM + 1, *config.hidden, d], config.activation, seed=config.seed)
    net.weights[-1][...] = 0.0  # untrained predictor outputs exactly zero noise
    return DdpmModel(net, make_schedule(config.T), (L, N), stats, {"config": asdict(config)})


def _check_step(schedule: NoiseSchedule, t) -> None:
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"diffusion step must lie in 1..{schedule.T}")


def forward_diffuse(x0, t, eps, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form draw from q(x_t | x_0); ``t`` may be per-row for a batch."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} does not match data shape {x0.shape}")
    _check_step(schedule, t)
    ab = schedule.alpha_bar[np.asarray(t)]
    ab = np.reshape(ab, np.shape(ab) + (1,) * (x0.ndim - np.ndim(ab)))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def forward_step(x_prev, t, eps, schedule: NoiseSchedule) -> np.ndarray:
    """One forward kernel q(x_t | x_{t-1})."""
    _check_step(schedule, t)
    return np.sqrt(schedule.alpha[t]) * np.asarray(x_prev) + np.sqrt(schedule.beta[t]) * np.asarray(eps)


def _net_input(model: DdpmModel, x_flat: np.ndarray, t: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.concatenate([x_flat, timestep_embedding(t), c[:, None]], axis=1)


def predict_noise(model: DdpmModel, x_t, t, c) -> np.ndarray:
    """eps_theta(x_t, t, c) for a batch of windows (batch x L x N)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    b = x_t.shape[0]
    t = np.broadcast_to(np.asarray(t), (b,))
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), (b,))
    out, _ = nn.forward(model.net, _net_input(model, x_t.reshape(b, -1), t, c))
    return out.reshape(x_t.shape)


Predictor = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def training_loss(model: DdpmModel, x0, c, rng: np.random.Generator, predictor: Predictor | None = None):
    """Noise-prediction MSE on a batch; returns (loss, grads in net.params() order).

    With ``predictor`` given (a stand-in for the network) no gradients are
    computed and ``None`` is returned in their place.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 3 or x0.shape[1:] != tuple(model.window_shape):
        raise ValueError(f"batch must be (B, {model.window_shape[0]}, {model.window_shape[1]}), got {x0.shape}")
    b = x0.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), (b,))
    t = rng.integers(1, model.schedule.T + 1, size=b)
    eps = rng.standard_normal(x0.shape)
    x_t = forward_diffuse(x0, t, eps, model.schedule)
    if predictor is not None:
        pred = np.asarray(predictor(x_t, t, c), dtype=np.float64)
        return float(np.mean((pred - eps) ** 2)), None
    flat_eps = eps.reshape(b, -1)
    pred, tape = nn.forward(model.net, _net_input(model, x_t.reshape(b, -1), t, c))
    diff = pred - flat_eps
    loss = float(np.mean(diff**2))
    grads = nn.backward(model.net, tape, 2.0 * diff / diff.size)
    return loss, grads


def train(windows, intensities, config: DiffusionConfig | None = None, stats=None,
          model: DdpmModel | None = None) -> DdpmModel:
    """Adam minimization of the noise-prediction loss; deterministic under ``config.seed``."""
    config = config or DiffusionConfig()
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] == 0:
        raise ValueError("windows must be a non-empty (count, L, N) array of equal-shaped windows")
    c = np.asarray(intensities, dtype=np.float64).reshape(-1)
    if c.shape[0] != x.shape[0]:
        raise ValueError("one intensity per window required")
    model = model or init_model(x.shape[1:], config, stats)
    rng = np.random.default_rng(config.seed)
    opt = nn.adam_init(model.net, lr=config.lr)
    losses = []
    n = x.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            loss, grads = training_loss(model, x[idx], c[idx], rng)
            nn.adam_step(model.net, grads, opt)
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
        if epoch % 50 == 0 or epoch == config.epochs - 1:
            log.info("diffusion epoch %d loss %.5f", epoch, losses[-1])
    model.meta.update({
        "seed": config.seed,
        "epochs": config.epochs,
        "losses": losses,
        "dataset_hash": _hash_arrays(x, c),
    })
    return model


def _hash_arrays(*arrays) -> str:
    import hashlib

    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def reverse_step(model: DdpmModel, x_t, t: int, c, z, predictor: Predictor | None = None) -> np.ndarray:
    """x_{t-1} = mu_theta(x_t, t, c) + sqrt(tilde_beta_t) z, noise suppressed at t = 1."""
    _check_step(model.schedule, t)
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 2
    xb = x_t[None] if single else x_t
    b = xb.shape[0]
    tt = np.full(b, t)
    cc = np.broadcast_to(np.asarray(c, dtype=np.float64), (b,))
    eps_hat = predictor(xb, tt, cc) if predictor is not None else predict_noise(model, xb, tt, cc)
    s = model.schedule
    mean = (xb - s.beta[t] / np.sqrt(1.0 - s.alpha_bar[t]) * eps_hat) / np.sqrt(s.alpha[t])
    if t > 1:
        zb = np.asarray(z, dtype=np.float64).reshape(xb.shape)
        mean = mean + np.sqrt(s.tilde_beta[t]) * zb
    return mean[0] if single else mean


def sample(model: DdpmModel, count: int, c: float, seed: int, predictor: Predictor | None = None) -> np.ndarray:
    """Ancestral sampling; sample ``i`` draws from its own stream seeded (seed, i)."""
    if not 0.0 <= c <= 1.0:
        raise ValueError("intensity must lie in [0, 1]")
    L, N = model.window_shape
    gens = [np.random.default_rng([seed, i]) for i in range(count)]
    x = np.stack([g.standard_normal((L, N)) for g in gens]) if count else np.zeros((0, L, N))
    for t in range(model.schedule.T, 0, -1):
        z = np.stack([g.standard_normal((L, N)) for g in gens]) if t > 1 and count else None
        x = reverse_step(model, x, t, c, z, predictor)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite values produced at reverse step t={t}")
    return x


def synthetic_to_prices(window, stats: StandardizationStats, base_prices) -> np.ndarray:
    """Destandardize, clip returns to [-0.5, 1.0] and compound from ``base_prices``."""
    base = np.asarray(base_prices, dtype=np.float64)
    if np.any(base <= 0):
        raise ValueError("base prices must be positive")
    r = np.clip(stats.destandardize(window), *RETURN_CLIP)
    return base * np.cumprod(1.0 + r, axis=0)


def write_samples_csv(path, samples, intensity: float) -> None:
    """One row per (sample, step-in-window, asset)."""
    samples = np.asarray(samples)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "step", "asset", "intensity", "value"])
        for i, win in enumerate(samples):
            for s, row in enumerate(win):
                for a, v in enumerate(row):
                    w.writerow([i, s, a, intensity, repr(float(v))])
