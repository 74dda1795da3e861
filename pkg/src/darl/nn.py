"""Small float64 MLP with hand-written backprop and Adam."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda pre, post: 1.0 - post * post),
    "relu": (lambda z: np.maximum(z, 0.0), lambda pre, post: (pre > 0.0).astype(np.float64)),
    "linear": (lambda z: z, lambda pre, post: np.ones_like(pre)),
}


@dataclass
class Mlp:
    sizes: list[int]
    weights: list[np.ndarray]  # weights[k] has shape (sizes[k], sizes[k+1])
    biases: list[np.ndarray]
    activation: str = "tanh"
    seed: int | None = None

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in (W0, b0, W1, b1, ...) order; views, not copies."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for p in self.params():
            p[...] = flat[pos : pos + p.size].reshape(p.shape)
            pos += p.size

    def copy(self) -> "Mlp":
        return Mlp(list(self.sizes), [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.activation, self.seed)

    def __call__(self, x):
        return forward(self, x)[0]

    def to_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "sizes": list(self.sizes),
            "activation": self.activation,
            "seed": self.seed,
            "params": self.flat().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        if d.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('format_version')}")
        net = init_mlp(d["sizes"], d["activation"], seed=0)
        net.set_flat(np.asarray(d["params"], dtype=np.float64))
        net.seed = d.get("seed")
        return net


@dataclass
class Tape:
    inputs: list[np.ndarray]  # input to each layer
    outputs: list[np.ndarray]  # activation output of each hidden layer
    pre: list[np.ndarray]
    batched: bool


def init_mlp(sizes, activation: str = "tanh", seed: int | None = 0) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"invalid layer sizes {sizes}")
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, weights, biases, activation, seed)


def forward(net: Mlp, x) -> tuple[np.ndarray, Tape]:
    """Evaluate on a vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.shape[1] != net.sizes[0]:
        raise ValueError(f"input has {h.shape[1]} features, net expects {net.sizes[0]}")
    act, _ = _ACTIVATIONS[net.activation]
    inputs, outputs, pre = [], [], []
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        if k == last:
            h = z
        else:
            pre.append(z)
            h = act(z)
            outputs.append(h)
    out = h if batched else h[0]
    return out, Tape(inputs, outputs, pre, batched)


def backward(net: Mlp, tape: Tape, grad_out) -> list[np.ndarray]:
    """Gradients of ``sum(output * grad_out)`` in ``net.params()`` order.

    For batched input the gradient is summed over the batch.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if not tape.batched:
        g = g[None, :]
    if len(tape.inputs) != len(net.weights) or g.shape != (tape.inputs[0].shape[0], net.sizes[-1]):
        raise ValueError("tape does not match this net or output gradient shape")
    _, dact = _ACTIVATIONS[net.activation]
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    for k in range(len(net.weights) - 1, -1, -1):
        grads[2 * k] = tape.inputs[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0:
            g = (g @ net.weights[k].T) * dact(tape.pre[k - 1], tape.outputs[k - 1])
    return grads


def input_gradient(net: Mlp, tape: Tape, grad_out) -> np.ndarray:
    """Gradient of ``sum(output * grad_out)`` with respect to the input."""
    g = np.asarray(grad_out, dtype=np.float64)
    if not tape.batched:
        g = g[None, :]
    _, dact = _ACTIVATIONS[net.activation]
    for k in range(len(net.weights) - 1, -1, -1):
        g = g @ net.weights[k].T
        if k > 0:
            g = g * dact(tape.pre[k - 1], tape.outputs[k - 1])
    return g if tape.batched else g[0]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    skipped: int = field(default=0)


def adam_init(params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    if isinstance(params, Mlp):
        params = params.params()
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr, beta1, beta2, eps)


def adam_step(params, grads, state: AdamState) -> bool:
    """In-place Adam update of ``params`` (an Mlp or list of arrays).

    Returns False, leaving everything untouched, when a gradient is non-finite.
    """
    if isinstance(params, Mlp):
        params = params.params()
    if len(params) != len(grads) or any(p.shape != np.shape(g) for p, g in zip(params, grads)):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        log.warning("non-finite gradient at Adam step %d; update skipped", state.step + 1)
        return False
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True
