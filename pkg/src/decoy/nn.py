"""Small numpy feed-forward networks with hand-written backprop.

Covers what the damage models need: dense layers, relu/identity/sigmoid,
binary and categorical cross-entropy, squared error, Gaussian KL, the
reparameterization trick, and Adam.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ModelError

ACTIVATIONS = ("relu", "identity", "sigmoid")
CHECKPOINT_VERSION = 1


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    return z


def _act_grad(name, z, a, da):
    if name == "relu":
        return da * (z > 0)
    if name == "sigmoid":
        return da * a * (1.0 - a)
    return da


class Mlp:
    """Stack of affine layers, each followed by its activation."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], activations: Sequence[str]):
        if not (len(weights) == len(biases) == len(activations)) or not weights:
            raise ContractError("weights, biases and activations must be equal-length and non-empty")
        for i, (w, b, a) in enumerate(zip(weights, biases, activations)):
            if a not in ACTIVATIONS:
                raise ContractError(f"layer {i}: unknown activation {a!r}")
            if w.shape[1] != b.shape[0]:
                raise ContractError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ContractError(f"layer {i} input {w.shape[0]} != previous output {weights[i - 1].shape[1]}")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.activations = list(activations)

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator, hidden: str = "relu", out: str = "identity") -> "Mlp":
        ws, bs, acts = [], [], []
        for i, (m, n) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            act = out if last else hidden
            scale = np.sqrt((2.0 if act == "relu" else 1.0) / m)
            ws.append(rng.normal(0.0, scale, size=(m, n)))
            bs.append(np.zeros(n))
            acts.append(act)
        return cls(ws, bs, acts)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[1] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x):
        return self.forward_cache(x)[0]

    __call__ = forward

    def forward_cache(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ContractError(f"input dim {x.shape[-1]} != {self.in_dim}")
        cache = []
        a = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = a @ w + b
            out = _act(act, z)
            cache.append((a, z, out))
            a = out
        return a, cache

    def backward(self, cache, grad_out):
        """Gradients for :meth:`params` (same order) and for the input."""
        grads = []
        da = grad_out
        for (a_in, z, a_out), w, act in zip(reversed(cache), reversed(self.weights), reversed(self.activations)):
            dz = _act_grad(act, z, a_out, da)
            if a_in.ndim == 1:
                dw = np.outer(a_in, dz)
                db = dz
            else:
                dw = a_in.T @ dz
                db = dz.sum(axis=0)
            grads += [db, dw]
            da = dz @ w.T
        grads.reverse()
        return grads, da

    def to_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{i}.W"] = w
            out[f"{prefix}.{i}.b"] = b
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str, activations: Sequence[str]) -> "Mlp":
        n = len(activations)
        return cls([arrays[f"{prefix}.{i}.W"] for i in range(n)], [arrays[f"{prefix}.{i}.b"] for i in range(n)],
                   activations)


# ---------------------------------------------------------------- losses

def bce_with_logits(logits, y):
    """Mean binary cross-entropy on raw scores, and its gradient."""
    logits = np.asarray(logits, dtype=float)
    y = np.asarray(y, dtype=float)
    loss = np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits)))
    n = logits.size
    return float(loss.mean()), (sigmoid(logits) - y) / n


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    s = logits - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits, labels):
    """Mean categorical cross-entropy for integer labels, and its gradient."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n = len(labels)
    lp = log_softmax(logits)
    loss = -lp[np.arange(n), labels].mean()
    grad = np.exp(lp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def squared_error(pred, target):
    """Mean over rows of the summed squared error, and its gradient."""
    pred = np.asarray(pred, dtype=float)
    diff = pred - np.asarray(target, dtype=float).reshape(pred.shape)
    n = pred.shape[0] if pred.ndim > 1 else pred.size
    return float((diff ** 2).sum() / n), 2.0 * diff / n


@dataclass(frozen=True)
class GaussianLatent:
    mu: np.ndarray
    log_var: np.ndarray


def kl_gauss(latent: GaussianLatent):
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over the last axis."""
    mu, lv = np.asarray(latent.mu, dtype=float), np.asarray(latent.log_var, dtype=float)
    return -0.5 * np.sum(1.0 + lv - mu ** 2 - np.exp(lv), axis=-1)


def kl_gauss_grad(latent: GaussianLatent):
    """d kl_gauss / d (mu, log_var), elementwise."""
    return latent.mu, 0.5 * (np.exp(latent.log_var) - 1.0)


def reparameterize(latent: GaussianLatent, eps):
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != np.shape(latent.mu)[-1]:
        raise ContractError(f"eps dim {eps.shape[-1]} != latent dim {np.shape(latent.mu)[-1]}")
    return latent.mu + np.exp(0.5 * latent.log_var) * eps


# ------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if lr == 0:
            return
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


LossFn = Callable[[object], tuple[float, list[np.ndarray]]]


def train_step(params: Sequence[np.ndarray], batch, loss_fn: LossFn, opt: Adam, lr: float) -> float:
    """One Adam update of ``params`` in place; returns the pre-update loss."""
    if not lr >= 0:
        raise ContractError("learning rate must be non-negative")
    loss, grads = loss_fn(batch)
    if not np.isfinite(loss):
        names = [f"#{i} |g|max={np.abs(g).max() if g.size else 0:.3g}" for i, g in enumerate(grads)]
        raise ModelError(f"non-finite loss {loss!r}; gradient magnitudes: {', '.join(names)}")
    opt.step(grads, lr)
    return loss


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


# ------------------------------------------------------------ checkpoint

def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    meta = {"version": CHECKPOINT_VERSION, **meta}
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with np.load(io.BytesIO(Path(path).read_bytes()), allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files if k != "__meta__"}
            meta = json.loads(z["__meta__"].tobytes().decode())
    except (OSError, ValueError, KeyError) as exc:
        raise ModelError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ModelError(f"checkpoint {path} has version {meta.get('version')}, expected {CHECKPOINT_VERSION}")
    return arrays, meta
