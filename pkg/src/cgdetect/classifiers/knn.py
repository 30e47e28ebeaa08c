"""k-nearest-neighbour classifier with Euclidean distance."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import ConfigError, ShapeError
from ..weights_io import FeatureSet, WeightStore
from .base import Standardizer, predict_labels

CHUNK = 256


@dataclass(frozen=True)
class KnnConfig:
    k: int = 1
    distance: str = "euclidean"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.distance != "euclidean":
            raise ConfigError(f"unsupported distance {self.distance!r}")


def squared_distances(train: np.ndarray, query: np.ndarray) -> np.ndarray:
    """(n_query, n_train) squared Euclidean distances in float64."""
    a = train.astype(np.float64)
    q = query.astype(np.float64)
    d = (q * q).sum(axis=1)[:, None] - 2.0 * (q @ a.T) + (a * a).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def knn_predict(train: FeatureSet, query: np.ndarray, cfg: KnnConfig = KnnConfig()) -> np.ndarray:
    """Majority label among the k nearest training rows.

    Equal distances resolve to the lower training index; a split vote goes
    to the label of the closest neighbour.
    """
    return _neighbours(train.features, train.labels, np.asarray(query), cfg.k)[0]


def _neighbours(x: np.ndarray, labels: np.ndarray, query: np.ndarray, k: int):
    n = x.shape[0]
    if n == 0:
        raise ConfigError("kNN needs a non-empty training set")
    if k > n:
        raise ConfigError(f"k={k} exceeds the {n} training rows")
    if query.ndim != 2 or query.shape[1] != x.shape[1]:
        raise ShapeError(f"query dimension {query.shape[-1]} != training dimension {x.shape[1]}")
    out = np.empty(query.shape[0], dtype=np.int64)
    scores = np.empty(query.shape[0], dtype=np.float64)
    for start in range(0, query.shape[0], CHUNK):
        d = squared_distances(x, query[start:start + CHUNK])
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        votes = labels[order]
        ones = votes.sum(axis=1)
        lab = (2 * ones > k).astype(np.int64)
        tie = 2 * ones == k
        lab[tie] = votes[tie, 0]
        out[start:start + CHUNK] = lab
        scores[start:start + CHUNK] = _margin(np.sqrt(d), labels, k)
    return out, scores


def _margin(dist: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    # mean distance to the k nearest PG rows minus the same for CG rows
    parts = []
    for cls in (0, 1):
        dc = dist[:, labels == cls]
        if dc.shape[1] == 0:
            parts.append(np.full(dist.shape[0], np.inf))
            continue
        kk = min(k, dc.shape[1])
        parts.append(np.sort(dc, axis=1)[:, :kk].mean(axis=1))
    m = parts[0] - parts[1]
    return np.nan_to_num(m, posinf=1e300, neginf=-1e300)


@dataclass
class KnnModel:
    train_x: np.ndarray
    train_y: np.ndarray
    standardizer: Standardizer
    config: KnnConfig = KnnConfig()

    threshold = 0.0

    def predict(self, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        q = self.standardizer.transform(features)
        return _neighbours(self.train_x, self.train_y, q, self.config.k)

    def to_store(self) -> WeightStore:
        return WeightStore(
            {"knn.train_x": self.train_x, "knn.train_y": self.train_y.astype(np.float32),
             **self.standardizer.entries()},
            {"classifier": "knn", "k": str(self.config.k), "distance": self.config.distance},
        )

    @classmethod
    def from_store(cls, store: WeightStore) -> "KnnModel":
        md = store.metadata
        return cls(np.array(store["knn.train_x"]), np.array(store["knn.train_y"]).astype(np.int64),
                   Standardizer.from_store(store), KnnConfig(int(md["k"]), md.get("distance", "euclidean")))


def train_knn(fs: FeatureSet, cfg: KnnConfig = KnnConfig(), standardize: bool = True) -> KnnModel:
    if len(fs) == 0:
        raise ConfigError("kNN needs a non-empty training set")
    if cfg.k > len(fs):
        raise ConfigError(f"k={cfg.k} exceeds the {len(fs)} training rows")
    st = Standardizer.fit(fs.features, standardize)
    return KnnModel(st.transform(fs.features), fs.labels.copy(), st, cfg)
