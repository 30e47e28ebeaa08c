"""Two-way softmax head trained with minibatch Adam on cross-entropy."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from ..tensor import dense
from ..weights_io import FeatureSet, WeightStore
from .base import Standardizer, check_binary, fmt, predict_labels

N_CLASSES = 2
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-08
    decay: float = 0.0
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.lr <= 0:
            raise ValueError("Adam learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def softmax(z) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p, q) -> float:
    """-sum p*log q with q clamped below at 1e-12; ``p`` is one-hot."""
    p = np.asarray(p, dtype=np.float64)
    q = np.maximum(np.asarray(q, dtype=np.float64), PROB_FLOOR)
    return float(-(p * np.log(q)).sum())


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def loss_and_grad(w: np.ndarray, b: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over rows of ``x`` and its gradient w.r.t. (w, b)."""
    probs = softmax(dense(x, w, b))
    n = x.shape[0]
    loss = -np.log(np.maximum(probs[np.arange(n), y], PROB_FLOOR)).mean()
    g = probs.copy()
    g[np.arange(n), y] -= 1.0
    g /= n
    return loss, x.T @ g, g.sum(axis=0)


@dataclass
class SoftmaxHead:
    weights: np.ndarray  # (d, 2) float32
    bias: np.ndarray  # (2,) float32
    standardizer: Standardizer
    adam: AdamConfig = field(default_factory=AdamConfig)
    history: List[float] = field(default_factory=list)

    threshold = 0.5

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        x = self.standardizer.transform(features).astype(np.float64)
        return softmax(dense(x, self.weights.astype(np.float64), self.bias.astype(np.float64)))

    def predict(self, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        scores = self.predict_proba(features)[:, 1]
        return predict_labels(scores, self.threshold), scores

    def to_store(self) -> WeightStore:
        md = {"classifier": "softmax"}
        md.update({k: fmt(v) for k, v in vars(self.adam).items()})
        return WeightStore({"softmax.weights": self.weights, "softmax.bias": self.bias,
                            **self.standardizer.entries()}, md)

    @classmethod
    def from_store(cls, store: WeightStore) -> "SoftmaxHead":
        md = store.metadata
        cfg = AdamConfig(**{k: type(getattr(AdamConfig, k))(md[k]) for k in AdamConfig.__dataclass_fields__ if k in md})
        return cls(np.array(store["softmax.weights"]), np.array(store["softmax.bias"]),
                   Standardizer.from_store(store), cfg)


def train_softmax_head(fs: FeatureSet, cfg: AdamConfig = AdamConfig(), standardize: bool = True) -> SoftmaxHead:
    check_binary(fs, "softmax head")
    st = Standardizer.fit(fs.features, standardize)
    x = st.transform(fs.features).astype(np.float64)
    y = fs.labels
    rng = np.random.default_rng(cfg.seed)
    w = glorot_uniform(rng, x.shape[1], N_CLASSES)
    b = np.zeros(N_CLASSES)
    mw, vw = np.zeros_like(w), np.zeros_like(w)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    t = 0
    history = []
    n = x.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, gw, gb = loss_and_grad(w, b, x[idx], y[idx])
            t += 1
            lr = cfg.lr / (1.0 + cfg.decay * (t - 1))
            lr_t = lr * np.sqrt(1 - cfg.beta2 ** t) / (1 - cfg.beta1 ** t)
            mw = cfg.beta1 * mw + (1 - cfg.beta1) * gw
            vw = cfg.beta2 * vw + (1 - cfg.beta2) * gw * gw
            mb = cfg.beta1 * mb + (1 - cfg.beta1) * gb
            vb = cfg.beta2 * vb + (1 - cfg.beta2) * gb * gb
            w = w - lr_t * mw / (np.sqrt(vw) + cfg.epsilon)
            b = b - lr_t * mb / (np.sqrt(vb) + cfg.epsilon)
        history.append(float(loss_and_grad(w, b, x, y)[0]))
    return SoftmaxHead(w.astype(np.float32), b.astype(np.float32), st, cfg, history)
