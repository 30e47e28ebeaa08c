"""Second-order gradient tree boosting for binary logistic loss.

Each round fits a depth-limited regression tree to the gradient/hessian
statistics of the current margin.  Splits come from an exact greedy scan over
the sorted distinct values of every feature; leaf weights are
``-G / (H + lambda)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from ..weights_io import FeatureSet, WeightStore
from .base import Standardizer, check_binary, fmt, predict_labels

PRIOR_CLIP = 1e-6


@dataclass(frozen=True)
class GbtConfig:
    learning_rate: float = 0.1
    max_depth: int = 3
    n_estimators: int = 100
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    gamma: float = 0.0  # minimum split gain

    def __post_init__(self):
        if self.max_depth < 0 or self.n_estimators < 0:
            raise ValueError("max_depth and n_estimators must be non-negative")
        if self.learning_rate < 0 or self.reg_lambda < 0:
            raise ValueError("learning_rate and reg_lambda must be non-negative")


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf.  Rows with
    ``x[feature] < threshold`` go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        for _ in range(len(self.feature)):
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            rows = np.flatnonzero(inner)
            go_left = x[rows, f[rows]] < self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])
        return self.value[node].astype(np.float64)

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for i, f in enumerate(self.feature):
            if f >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max(initial=0))

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())


def _split_threshold(lo: np.float32, hi: np.float32) -> np.float32:
    mid = np.float32((np.float64(lo) + np.float64(hi)) / 2)
    # adjacent float32 values have no midpoint strictly between them
    return mid if lo < mid <= hi else hi


def best_split(x: np.ndarray, g: np.ndarray, h: np.ndarray, cfg: GbtConfig):
    """Exact greedy search; returns (gain, feature, threshold) or None.

    Ties keep the lowest feature index, then the lowest threshold.
    """
    if x.shape[0] < 2:
        return None
    G, H = g.sum(), h.sum()
    parent = G * G / (H + cfg.reg_lambda)
    order = np.argsort(x, axis=0, kind="stable")  # (n, d)
    v = np.take_along_axis(x, order, axis=0)
    gl = np.cumsum(g[order], axis=0)[:-1]
    hl = np.cumsum(h[order], axis=0)[:-1]
    ok = (v[1:] > v[:-1]) & (hl >= cfg.min_child_weight) & (H - hl >= cfg.min_child_weight)
    if not ok.any():
        return None
    gr, hr = G - gl, H - hl
    gain = 0.5 * (gl * gl / (hl + cfg.reg_lambda) + gr * gr / (hr + cfg.reg_lambda) - parent) - cfg.gamma
    gain = np.where(ok, gain, -np.inf)
    # argmax over the transposed array scans features first, then positions
    flat = int(np.argmax(gain.T))
    j, k = divmod(flat, gain.shape[0])
    if not gain[k, j] > 0:
        return None
    return float(gain[k, j]), j, _split_threshold(v[k, j], v[k + 1, j])


def build_tree(x: np.ndarray, g: np.ndarray, h: np.ndarray, cfg: GbtConfig) -> Tree:
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def grow(node, rows, depth):
        gs, hs = g[rows], h[rows]
        value[node] = float(-gs.sum() / (hs.sum() + cfg.reg_lambda))
        if depth >= cfg.max_depth or rows.size < 2:
            return
        split = best_split(x[rows], gs, hs, cfg)
        if split is None:
            return
        _, j, thr = split
        mask = x[rows, j] < thr
        feature[node] = j
        threshold[node] = thr
        l, r = new_node(), new_node()
        left[node], right[node] = l, r
        grow(l, rows[mask], depth + 1)
        grow(r, rows[~mask], depth + 1)

    grow(new_node(), np.arange(x.shape[0]), 0)
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float32),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=np.float32))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def logistic_loss(y: np.ndarray, margin: np.ndarray) -> float:
    # mean of log(1 + e^m) - y*m, evaluated stably
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


@dataclass
class GbtModel:
    trees: List[Tree]
    base_score: float
    config: GbtConfig
    standardizer: Standardizer
    history: List[float] = field(default_factory=list)
    degenerate: bool = False

    threshold = 0.5

    def margin(self, features: np.ndarray) -> np.ndarray:
        x = self.standardizer.transform(features)
        m = np.full(x.shape[0], self.base_score, dtype=np.float64)
        for t in self.trees:
            m += self.config.learning_rate * t.predict(x)
        return m

    def predict(self, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        p = sigmoid(self.margin(features))
        return predict_labels(p, self.threshold), p

    def to_store(self) -> WeightStore:
        sizes = np.array([len(t.feature) for t in self.trees], dtype=np.float32)
        cat = (lambda name, dt: np.concatenate([getattr(t, name) for t in self.trees]).astype(dt)
               if self.trees else np.zeros(0, dt))
        md = {"classifier": "gbt", "base_score": repr(float(self.base_score)),
              "degenerate": str(self.degenerate)}
        md.update({k: fmt(v) for k, v in vars(self.config).items()})
        return WeightStore({
            "gbt.tree_sizes": sizes,
            "gbt.feature": cat("feature", np.float32),
            "gbt.threshold": cat("threshold", np.float32),
            "gbt.left": cat("left", np.float32),
            "gbt.right": cat("right", np.float32),
            "gbt.value": cat("value", np.float32),
            **self.standardizer.entries(),
        }, md)

    @classmethod
    def from_store(cls, store: WeightStore) -> "GbtModel":
        md = store.metadata
        cfg = GbtConfig(**{k: type(getattr(GbtConfig, k))(md[k]) for k in GbtConfig.__dataclass_fields__})
        trees = []
        pos = 0
        for size in store["gbt.tree_sizes"].astype(np.int64):
            sl = slice(pos, pos + size)
            trees.append(Tree(store["gbt.feature"][sl].astype(np.int64), np.array(store["gbt.threshold"][sl]),
                              store["gbt.left"][sl].astype(np.int64), store["gbt.right"][sl].astype(np.int64),
                              np.array(store["gbt.value"][sl])))
            pos += size
        return cls(trees, float(md["base_score"]), cfg, Standardizer.from_store(store),
                   degenerate=md.get("degenerate") == "True")


def train_gbt(fs: FeatureSet, cfg: GbtConfig = GbtConfig(), standardize: bool = True) -> GbtModel:
    check_binary(fs, "gradient boosting")
    st = Standardizer.fit(fs.features, standardize)
    x = st.transform(fs.features)
    y = fs.labels.astype(np.float64)
    prior = float(np.clip(y.mean(), PRIOR_CLIP, 1 - PRIOR_CLIP))
    base = float(np.log(prior / (1 - prior)))
    margin = np.full(len(y), base)
    history = [logistic_loss(y, margin)]
    trees = []
    for _ in range(cfg.n_estimators):
        p = sigmoid(margin)
        tree = build_tree(x, p - y, p * (1 - p), cfg)
        trees.append(tree)
        margin = margin + cfg.learning_rate * tree.predict(x)
        history.append(logistic_loss(y, margin))
    degenerate = all(t.n_leaves == 1 for t in trees)
    if degenerate and cfg.n_estimators:
        warnings.warn("no tree found a split; model predicts the base score", UserWarning, stacklevel=2)
    return GbtModel(trees, base, cfg, st, history, degenerate)
