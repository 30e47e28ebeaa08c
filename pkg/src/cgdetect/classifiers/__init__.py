"""Interchangeable top classifiers over bottleneck features.

Every trained model exposes ``predict(features) -> (labels, scores)`` and
``to_store()``; :func:`load_model` restores any of them from a CGF1 file.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

from ..errors import ConfigError
from ..weights_io import FeatureSet
from .base import Standardizer, load_model, model_from_store, save_model
from .gbt import GbtConfig, GbtModel, train_gbt
from .knn import KnnConfig, KnnModel, knn_predict, train_knn
from .oracle import OracleModel
from .softmax import AdamConfig, SoftmaxHead, cross_entropy, softmax, train_softmax_head
from .svm import SvmModel, train_svm

CLASSIFIERS = ("softmax", "knn", "svm-linear", "svm-rbf", "gbt")

DEFAULT_PARAMS: Dict[str, Dict[str, Any]] = {
    "softmax": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-08, "decay": 0.0,
                "epochs": 200, "batch_size": 32},
    "knn": {"k": 1},
    "svm-linear": {"C": 0.01, "tol": 1e-3},
    "svm-rbf": {"C": 10.0, "gamma": 0.001, "tol": 1e-3},
    "gbt": {"learning_rate": 0.1, "max_depth": 3, "n_estimators": 100, "reg_lambda": 1.0},
}

# accepted on top of the defaults above
EXTRA_PARAMS: Dict[str, tuple] = {
    "svm-linear": ("max_passes", "max_steps"),
    "svm-rbf": ("max_passes", "max_steps"),
    "gbt": ("min_child_weight", "gamma"),
    "_oracle": (),
}


@dataclass
class ClassifierSpec:
    """A classifier family plus hyperparameters; ``fit`` trains one model."""

    name: str
    params: Dict[str, Any] = field(default_factory=dict)
    standardize: bool = True
    seed: int = 0
    leaked: Optional[FeatureSet] = None  # only for the hidden "_oracle" hook

    def __post_init__(self):
        if self.name not in CLASSIFIERS and self.name != "_oracle":
            raise ConfigError(f"unknown classifier {self.name!r}; choose from {', '.join(CLASSIFIERS)}")

        allowed = set(DEFAULT_PARAMS.get(self.name, {})) | set(EXTRA_PARAMS.get(self.name, ()))
        unknown = sorted(set(self.params) - allowed)
        if unknown:
            raise ConfigError(f"{self.name} does not take parameter(s) {', '.join(unknown)}; "
                              f"known: {', '.join(sorted(allowed)) or 'none'}")

    def resolved(self) -> Dict[str, Any]:
        p = dict(DEFAULT_PARAMS.get(self.name, {}))
        p.update(self.params)
        return p

    def with_params(self, **params) -> "ClassifierSpec":
        merged = dict(self.params)
        merged.update(params)
        return ClassifierSpec(self.name, merged, self.standardize, self.seed, self.leaked)

    def fit(self, fs: FeatureSet):
        p = self.resolved()
        if self.name == "softmax":
            return train_softmax_head(fs, AdamConfig(seed=self.seed, **p), self.standardize)
        if self.name == "knn":
            return train_knn(fs, KnnConfig(**p), self.standardize)
        if self.name in ("svm-linear", "svm-rbf"):
            kernel = self.name.split("-")[1]
            if kernel == "linear":
                p.pop("gamma", None)
            return train_svm(fs, kernel=kernel, seed=self.seed, standardize=self.standardize, **p)
        if self.name == "gbt":
            return train_gbt(fs, GbtConfig(**p), self.standardize)
        if self.leaked is None:
            raise ConfigError("_oracle classifier needs leaked labels")
        return OracleModel.leak(self.leaked)
