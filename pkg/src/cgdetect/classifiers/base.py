"""Shared plumbing for the top classifiers: standardization and persistence."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from ..errors import DegenerateInputError, FormatError, ShapeError
from ..weights_io import FeatureSet, WeightStore, load_weights, save_weights


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension z-scoring with statistics frozen as float32."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, enabled: bool = True) -> "Standardizer":
        d = x.shape[1]
        if not enabled or x.shape[0] == 0:
            return cls(np.zeros(d, np.float32), np.ones(d, np.float32))
        x64 = x.astype(np.float64)
        mean = x64.mean(axis=0)
        std = x64.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(mean.astype(np.float32), std.astype(np.float32))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"feature dimension {x.shape[-1] if x.ndim else 0} does not match trained dimension {self.dim}")
        return ((x.astype(np.float64) - self.mean) / self.std).astype(np.float32)

    def entries(self) -> Dict[str, np.ndarray]:
        return {"standardize.mean": self.mean, "standardize.std": self.std}

    @classmethod
    def from_store(cls, store: WeightStore) -> "Standardizer":
        return cls(np.array(store["standardize.mean"]), np.array(store["standardize.std"]))


def check_binary(fs: FeatureSet, what: str) -> None:
    if len(fs) < 2 or len(np.unique(fs.labels)) < 2:
        raise DegenerateInputError(f"{what} needs both classes present (got {len(fs)} rows, "
                                   f"classes {sorted(set(fs.labels.tolist()))})")


def fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def predict_labels(scores: np.ndarray, threshold: float) -> np.ndarray:
    return (scores > threshold).astype(np.int64)


def save_model(model, path) -> None:
    save_weights(model.to_store(), path)


def load_model(path):
    return model_from_store(load_weights(path))


def model_from_store(store: WeightStore):
    # the package re-exports a ``softmax`` function, so import the submodule explicitly
    from . import gbt, knn, oracle, svm
    from .softmax import SoftmaxHead

    kinds = {
        "softmax": SoftmaxHead,
        "knn": knn.KnnModel,
        "svm": svm.SvmModel,
        "gbt": gbt.GbtModel,
        "oracle": oracle.OracleModel,
    }
    kind = store.metadata.get("classifier")
    if kind not in kinds:
        raise FormatError(f"not a classifier file (classifier={kind!r})")
    return kinds[kind].from_store(store)


Prediction = Tuple[np.ndarray, np.ndarray]
