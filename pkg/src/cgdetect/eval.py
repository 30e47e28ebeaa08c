"""Stratified k-fold evaluation, grid search and the reported metrics."""
from __future__ import annotations

import itertools
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import CGDetectError, ConfigError
from .weights_io import FeatureSet

log = logging.getLogger(__name__)

GRID_C = tuple(10.0 ** e for e in range(-2, 11))
GRID_GAMMA = tuple(10.0 ** e for e in range(-9, 4))


class FoldError(CGDetectError):
    def __init__(self, fold: int, cause: BaseException):
        super().__init__(f"fold {fold}: {type(cause).__name__}: {cause}")
        self.fold = fold


class GridSearchError(CGDetectError):
    pass


class UndefinedMetricError(CGDetectError, ValueError):
    pass


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    assignments: np.ndarray
    seed: int

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> List[int]:
        return np.bincount(self.assignments, minlength=self.n_folds).tolist()


def make_folds(labels: Sequence[int], n_folds: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified, seeded fold assignment.

    Each class is shuffled and dealt round-robin; the deal continues where
    the previous class stopped, which keeps total fold sizes within one.
    """
    labels = np.asarray(labels)
    if n_folds < 2:
        raise ConfigError(f"need at least 2 folds, got {n_folds}")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) and counts.min() < n_folds:
        raise ConfigError(f"class {classes[counts.argmin()]} has {counts.min()} samples, fewer than {n_folds} folds")
    rng = np.random.default_rng(seed)
    assign = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        assign[idx] = (offset + np.arange(len(idx))) % n_folds
        offset = (offset + len(idx)) % n_folds
    return FoldPlan(n_folds, assign, seed)


def confusion(labels, predictions) -> Tuple[np.ndarray, np.ndarray]:
    """Raw ``[[TN, FP], [FN, TP]]`` counts and the row-normalized matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ValueError(f"length mismatch: {labels.shape[0]} labels vs {predictions.shape[0]} predictions")
    raw = np.zeros((2, 2), dtype=np.int64)
    np.add.at(raw, (labels, predictions), 1)
    rows = raw.sum(axis=1, keepdims=True)
    norm = np.divide(raw, rows, out=np.zeros((2, 2)), where=rows > 0)
    return raw, norm


def roc_auc(labels, scores) -> Tuple[np.ndarray, float]:
    """ROC points (fpr, tpr) over a threshold sweep, and trapezoidal AUC.

    Equal scores form one threshold step, so ties count half.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("ROC/AUC undefined with a single class present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    l = labels[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(l)[last]
    fp = np.cumsum(1 - l)[last]
    tpr = np.r_[0, tp] / pos
    fpr = np.r_[0, fp] / neg
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2))
    return np.column_stack([fpr, tpr]), auc


@dataclass
class EvalReport:
    classifier: str
    params: Dict[str, Any]
    seed: int
    fold_accuracy: List[float]
    confusion: np.ndarray
    confusion_normalized: np.ndarray
    roc: Optional[np.ndarray]
    auc: Optional[float]
    fold_seconds: List[float] = field(default_factory=list)
    fold_params: List[Dict[str, Any]] = field(default_factory=list)
    ids: List[str] = field(default_factory=list)
    labels: Optional[np.ndarray] = None
    predictions: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None
    folds: Optional[np.ndarray] = None

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def variance(self) -> float:
        # population variance over folds
        return float(np.var(self.fold_accuracy))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def summary(self) -> Dict[str, Any]:
        return {
            "classifier": self.classifier,
            "params": self.params,
            "seed": self.seed,
            "fold_accuracy": self.fold_accuracy,
            "mean_accuracy": self.mean_accuracy,
            "std": self.std,
            "variance": self.variance,
            "confusion": self.confusion.tolist(),
            "confusion_normalized": self.confusion_normalized.tolist(),
            "auc": self.auc,
            "fold_params": self.fold_params,
        }


def _run_pool(fn: Callable, tasks: Sequence, jobs: int) -> List:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def _fit_fold(task):
    spec, fs, plan, fold = task
    t0 = time.perf_counter()
    try:
        train = fs.subset(plan.train_index(fold))
        test_idx = plan.test_index(fold)
        model = spec.fit(train)
        labels, scores = model.predict(fs.features[test_idx])
    except CGDetectError as e:
        raise FoldError(fold, e) from e
    except (ValueError, ArithmeticError) as e:
        raise FoldError(fold, e) from e
    return test_idx, labels, scores, time.perf_counter() - t0, getattr(model, "selected_params", None)


def _assemble(name, params, fs, plan, results, fold_params=None) -> EvalReport:
    n = len(fs)
    preds = np.zeros(n, dtype=np.int64)
    scores = np.zeros(n, dtype=np.float64)
    accs, secs = [], []
    for test_idx, lab, sc, dt in results:
        preds[test_idx] = lab
        scores[test_idx] = sc
        accs.append(float(np.mean(lab == fs.labels[test_idx])) if len(test_idx) else float("nan"))
        secs.append(dt)
    raw, norm = confusion(fs.labels, preds)
    try:
        roc, auc = roc_auc(fs.labels, scores)
    except UndefinedMetricError:
        roc, auc = None, None
    return EvalReport(name, dict(params), plan.seed, accs, raw, norm, roc, auc, secs, fold_params or [],
                      list(fs.ids), fs.labels.copy(), preds, scores, plan.assignments.copy())


def cross_validate(fs: FeatureSet, spec, plan: FoldPlan, jobs: int = 1) -> EvalReport:
    """Train on k-1 folds, test on the held-out fold, for every fold.

    ``spec`` is anything with ``fit(FeatureSet) -> model`` whose model has
    ``predict(features) -> (labels, scores)``; standardization happens
    inside ``fit`` so it only ever sees the training split.
    """
    if plan.assignments.shape[0] != len(fs):
        raise ConfigError(f"fold plan covers {plan.assignments.shape[0]} rows, feature set has {len(fs)}")
    results = [r[:4] for r in _run_pool(_fit_fold, [(spec, fs, plan, f) for f in range(plan.n_folds)], jobs)]
    name = getattr(spec, "name", type(spec).__name__)
    params = spec.resolved() if hasattr(spec, "resolved") else {}
    return _assemble(name, params, fs, plan, results)


@dataclass(frozen=True)
class GridSpec:
    axes: Tuple[Tuple[str, Tuple[float, ...]], ...]

    def __post_init__(self):
        if not self.axes or any(len(v) == 0 for _, v in self.axes):
            raise ConfigError("grid needs at least one non-empty axis")

    @classmethod
    def of(cls, **axes: Sequence[float]) -> "GridSpec":
        return cls(tuple((k, tuple(float(x) for x in v)) for k, v in axes.items()))

    @property
    def names(self) -> List[str]:
        return [k for k, _ in self.axes]

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(v) for _, v in self.axes)

    def cells(self) -> List[Dict[str, float]]:
        return [dict(zip(self.names, combo)) for combo in itertools.product(*(v for _, v in self.axes))]


def default_grid(kernel: str = "rbf") -> GridSpec:
    if kernel == "linear":
        return GridSpec.of(C=GRID_C)
    return GridSpec.of(C=GRID_C, gamma=GRID_GAMMA)


@dataclass
class GridResult:
    grid: GridSpec
    best_params: Dict[str, float]
    best_score: float
    table: List[Tuple[Dict[str, float], float, List[float]]]

    def score_matrix(self) -> np.ndarray:
        return np.array([s for _, s, _ in self.table]).reshape(self.grid.shape)


def _grid_cell(task):
    spec, fs, plan, params = task
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            rep = cross_validate(fs, spec.with_params(**params), plan)
        except CGDetectError as e:
            log.warning("grid cell %s failed: %s", params, e)
            return params, float("nan"), [], str(e)
    return params, rep.mean_accuracy, rep.fold_accuracy, None


def grid_search(fs: FeatureSet, spec, grid: GridSpec, plan: FoldPlan, jobs: int = 1) -> GridResult:
    """Best cell by mean CV accuracy; ties go to the smaller value of each
    axis in axis order (smaller C, then smaller gamma)."""
    rows = _run_pool(_grid_cell, [(spec, fs, plan, p) for p in grid.cells()], jobs)
    ok = [r for r in rows if not math.isnan(r[1])]
    if not ok:
        raise GridSearchError("every grid cell failed: " + "; ".join(f"{p}: {e}" for p, _, _, e in rows[:5]))
    best = min(ok, key=lambda r: (-r[1], *(r[0][k] for k in grid.names)))
    table = [(p, s, accs) for p, s, accs, _ in rows]
    return GridResult(grid, dict(best[0]), best[1], table)


class _GridFitted:
    """Spec wrapper that grid-searches on its training split before fitting."""

    def __init__(self, spec, grid: GridSpec, inner_folds: int, seed: int):
        self.spec = spec
        self.grid = grid
        self.inner_folds = inner_folds
        self.seed = seed
        self.name = spec.name

    def resolved(self):
        return self.spec.resolved()

    def fit(self, fs: FeatureSet):
        inner = make_folds(fs.labels, self.inner_folds, self.seed)
        res = grid_search(fs, self.spec, self.grid, inner)
        model = self.spec.with_params(**res.best_params).fit(fs)
        model.selected_params = res.best_params
        return model


def nested_cross_validate(fs: FeatureSet, spec, grid: GridSpec, plan: FoldPlan,
                          inner_folds: Optional[int] = None, jobs: int = 1) -> EvalReport:
    """Outer CV where each training split picks its own hyperparameters by
    an inner grid search over that split only."""
    wrapped = _GridFitted(spec, grid, inner_folds or plan.n_folds, plan.seed)
    results = _run_pool(_fit_fold, [(wrapped, fs, plan, f) for f in range(plan.n_folds)], jobs)
    chosen = [r[4] for r in results]
    return _assemble(spec.name, spec.resolved(), fs, plan, [r[:4] for r in results], chosen)


def learning_curve(fs: FeatureSet, spec, train_fractions: Sequence[float], plan: FoldPlan) -> List[Dict[str, float]]:
    """Mean/std train and validation accuracy per training-set fraction."""
    rows = []
    for frac in train_fractions:
        if not 0 < frac <= 1:
            raise ConfigError(f"train fraction must lie in (0, 1], got {frac}")
        tr_acc, va_acc = [], []
        skipped = False
        for fold in range(plan.n_folds):
            train_idx = plan.train_index(fold)
            rng = np.random.default_rng([plan.seed, fold])
            m = max(1, int(math.ceil(frac * len(train_idx))))
            sub = np.sort(rng.permutation(train_idx)[:m]) if frac < 1 else train_idx
            if len(np.unique(fs.labels[sub])) < 2:
                warnings.warn(f"fraction {frac} leaves fold {fold} with one class; skipped")
                skipped = True
                break
            train = fs.subset(sub)
            model = spec.fit(train)
            tr_acc.append(float(np.mean(model.predict(train.features)[0] == train.labels)))
            test_idx = plan.test_index(fold)
            va_acc.append(float(np.mean(model.predict(fs.features[test_idx])[0] == fs.labels[test_idx])))
        if skipped:
            continue
        rows.append({
            "fraction": float(frac),
            "train_size": float(np.mean([max(1, int(math.ceil(frac * len(plan.train_index(f))))) for f in range(plan.n_folds)])),
            "train_mean": float(np.mean(tr_acc)), "train_std": float(np.std(tr_acc)),
            "val_mean": float(np.mean(va_acc)), "val_std": float(np.std(va_acc)),
        })
    return rows


# ---- serialization -------------------------------------------------------

def _header(config: Mapping[str, Any]) -> str:
    return "".join(f"# {k}={config[k]}\n" for k in sorted(config))


def _num(v) -> str:
    return repr(float(v))


def write_tsv(path, columns: Sequence[str], rows: Sequence[Sequence[Any]], config: Mapping[str, Any]) -> None:
    lines = [_header(config), "\t".join(columns) + "\n"]
    for r in rows:
        lines.append("\t".join(_num(v) if isinstance(v, (float, np.floating)) else str(v) for v in r) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def write_report(report: EvalReport, out_dir, config: Mapping[str, Any]) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / f"{k}.tsv" for k in ("folds", "confusion", "roc", "predictions")}
    fold_rows = [(i, a) for i, a in enumerate(report.fold_accuracy)]
    fold_rows += [("mean", report.mean_accuracy), ("std", report.std), ("variance", report.variance)]
    write_tsv(paths["folds"], ["fold", "accuracy"], fold_rows, config)
    c, cn = report.confusion, report.confusion_normalized
    write_tsv(paths["confusion"], ["true", "pred_pg", "pred_cg", "norm_pg", "norm_cg"],
              [("pg", int(c[0, 0]), int(c[0, 1]), cn[0, 0], cn[0, 1]),
               ("cg", int(c[1, 0]), int(c[1, 1]), cn[1, 0], cn[1, 1])], config)
    roc_rows = [] if report.roc is None else [tuple(p) for p in report.roc]
    write_tsv(paths["roc"], ["fpr", "tpr"], roc_rows, config)
    pred_rows = [(i, int(l), int(p), float(s), int(f)) for i, l, p, s, f in
                 zip(report.ids, report.labels, report.predictions, report.scores, report.folds)]
    write_tsv(paths["predictions"], ["id", "label", "pred", "score", "fold"], pred_rows, config)
    paths["summary"] = out / "summary.json"
    summary = {"config": dict(config), **report.summary()}
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    return paths


def write_grid(result: GridResult, path, config: Mapping[str, Any]) -> None:
    names = result.grid.names
    rows = [tuple(p[k] for k in names) + (s,) + tuple(accs) for p, s, accs in result.table]
    n_folds = max((len(a) for _, _, a in result.table), default=0)
    write_tsv(path, names + ["mean_accuracy"] + [f"fold{i}" for i in range(n_folds)], rows, config)


def write_heatmap(result: GridResult, path, config: Mapping[str, Any]) -> None:
    """Rows follow the first axis, columns the second (C x gamma)."""
    if len(result.grid.axes) != 2:
        write_grid(result, path, config)
        return
    (ra, rv), (ca, cv) = result.grid.axes
    m = result.score_matrix()
    rows = [(_num(r),) + tuple(m[i]) for i, r in enumerate(rv)]
    write_tsv(path, [f"{ra}\\{ca}"] + [_num(c) for c in cv], rows, config)
