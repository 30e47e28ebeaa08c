import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgdetect import eval as ev
from cgdetect.classifiers import ClassifierSpec
from cgdetect.errors import ConfigError
from cgdetect.weights_io import FeatureSet
from oracles import mann_whitney_auc


def check_plan(labels, plan):
    labels = np.asarray(labels)
    k = plan.n_folds
    a = plan.assignments
    assert a.shape == labels.shape and a.min() >= 0 and a.max() < k
    # disjoint and exhaustive by construction of a single assignment vector; check via indices
    idx = np.concatenate([plan.test_index(f) for f in range(k)])
    assert sorted(idx.tolist()) == list(range(len(labels)))
    sizes = plan.sizes()
    assert max(sizes) - min(sizes) <= 1
    for c in np.unique(labels):
        per = [int(np.sum((a == f) & (labels == c))) for f in range(k)]
        expected = np.sum(labels == c) / k
        assert all(abs(p - expected) < 1 for p in per)


@settings(max_examples=200, deadline=None)
@given(n_pos=st.integers(5, 60), n_neg=st.integers(5, 60), k=st.integers(2, 5), seed=st.integers(0, 10**6))
def test_fold_invariants(n_pos, n_neg, k, seed):
    labels = np.random.default_rng(seed).permutation(np.r_[np.ones(n_pos, int), np.zeros(n_neg, int)])
    plan = ev.make_folds(labels, k, seed)
    check_plan(labels, plan)
    assert np.array_equal(plan.assignments, ev.make_folds(labels, k, seed).assignments)


def test_fold_examples():
    plan = ev.make_folds([0] * 5 + [1] * 5, 5, 0)
    for f in range(5):
        assert sorted(np.array([0] * 5 + [1] * 5)[plan.test_index(f)].tolist()) == [0, 1]
    big = ev.make_folds(np.r_[np.ones(4850, int), np.zeros(4850, int)], 5, 0)
    assert big.sizes() == [1940] * 5
    with pytest.raises(ConfigError):
        ev.make_folds([0, 0, 1], 2, 0)


def test_confusion_examples():
    raw, norm = ev.confusion([0, 0, 1, 1], [0, 1, 1, 1])
    assert raw.tolist() == [[1, 1], [0, 2]]
    np.testing.assert_allclose(norm, [[0.5, 0.5], [0, 1]])
    raw, _ = ev.confusion([0, 1, 1], [0, 1, 1])
    assert raw[0, 1] == raw[1, 0] == 0
    raw, _ = ev.confusion([0, 1, 1], [1, 0, 0])
    assert raw[0, 0] == raw[1, 1] == 0
    _, norm = ev.confusion([1, 1], [1, 0])
    assert norm[0].tolist() == [0, 0]
    with pytest.raises(ValueError):
        ev.confusion([0, 1], [0])


def test_auc_examples():
    assert ev.roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.3, 0.4])[1] == 1.0
    assert ev.roc_auc([0, 1, 0, 1], [1, 2, 3, 4])[1] == pytest.approx(0.75)
    # interleaving that ranks each class symmetrically
    assert ev.roc_auc([1, 0, 0, 1], [4, 3, 2, 1])[1] == 0.5
    assert ev.roc_auc([0, 1], [5, 5])[1] == 0.5
    with pytest.raises(ev.UndefinedMetricError):
        ev.roc_auc([1, 1], [0.1, 0.2])


def test_auc_vs_mann_whitney(rng):
    for _ in range(100):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, 6, n).astype(float) if rng.random() < 0.5 else rng.standard_normal(n)
        points, auc = ev.roc_auc(labels, scores)
        assert abs(auc - mann_whitney_auc(labels, scores)) <= 1e-9
        assert points[0].tolist() == [0, 0] and points[-1].tolist() == [1, 1]
        assert abs(ev.roc_auc(labels, np.exp(scores) * 3 + 1)[1] - auc) <= 1e-12


class _Majority:
    name = "majority"

    def fit(self, fs):
        lab = int(np.bincount(fs.labels, minlength=2).argmax())

        class M:
            def predict(self, x):
                return np.full(len(x), lab), np.full(len(x), float(lab))
        return M()


def test_majority_classifier_exact():
    labels = np.r_[np.ones(60, int), np.zeros(40, int)]
    fs = FeatureSet(np.zeros((100, 3)), labels, [str(i) for i in range(100)])
    rep = ev.cross_validate(fs, _Majority(), ev.make_folds(labels, 5, 0))
    assert rep.mean_accuracy == pytest.approx(0.6, abs=1e-15)
    assert rep.auc is not None
    assert int(rep.confusion.sum()) == 100


def test_oracle_perfect(rng):
    fs = FeatureSet(rng.standard_normal((50, 4)), rng.integers(0, 2, 50), [str(i) for i in range(50)])
    fs.labels[:10] = [0, 1] * 5
    rep = ev.cross_validate(fs, ClassifierSpec("_oracle", leaked=fs), ev.make_folds(fs.labels, 5, 1))
    assert rep.mean_accuracy == 1.0 and rep.variance == 0.0 and rep.auc == 1.0


def test_knn_tight_clusters(rng):
    y = np.arange(100) % 2
    x = rng.normal(0, 0.01, (100, 3))
    x[y == 1, 0] += 10
    fs = FeatureSet(x, y, [str(i) for i in range(100)])
    rep = ev.cross_validate(fs, ClassifierSpec("knn"), ev.make_folds(y, 5, 0))
    assert rep.mean_accuracy == 1.0
    assert rep.variance == pytest.approx(np.var(rep.fold_accuracy), abs=1e-12)


def test_report_statistics(rng):
    fs = FeatureSet(rng.standard_normal((60, 3)), np.arange(60) % 2, [str(i) for i in range(60)])
    rep = ev.cross_validate(fs, ClassifierSpec("knn"), ev.make_folds(fs.labels, 5, 0))
    accs = rep.fold_accuracy
    assert rep.mean_accuracy == pytest.approx(sum(accs) / 5, abs=1e-15)
    assert abs(rep.variance - sum((a - rep.mean_accuracy) ** 2 for a in accs) / 5) <= 1e-12
    assert len(rep.fold_seconds) == 5


def test_standardization_canary(rng):
    x = rng.standard_normal((40, 3))
    y = np.arange(40) % 2
    plan = ev.make_folds(y, 5, 0)
    test0 = plan.test_index(0)
    spiked = x.copy()
    spiked[test0[0]] = 1e9
    seen = []

    class Recorder:
        name = "svm-linear"

        def fit(self, fs):
            m = ClassifierSpec("svm-linear").fit(fs)
            seen.append((m.standardizer.mean.copy(), m.standardizer.std.copy(), m.dual_coef.copy()))
            return m

    for data in (x, spiked):
        ev.cross_validate(FeatureSet(data, y, [str(i) for i in range(40)]), Recorder(), plan)
    for a, b in zip(seen[0][:3], seen[5][:3]):
        np.testing.assert_array_equal(a, b)


def test_grid_search_and_ties():
    y = np.arange(40) % 2
    fs = FeatureSet(np.c_[y * 10.0, np.zeros(40)], y, [str(i) for i in range(40)])
    plan = ev.make_folds(y, 5, 0)
    res = ev.grid_search(fs, ClassifierSpec("svm-rbf"), ev.GridSpec.of(C=[10, 1], gamma=[1, 0.1]), plan)
    # every cell is perfect, so the smallest C then smallest gamma wins
    assert res.best_params == {"C": 1.0, "gamma": 0.1}
    assert res.score_matrix().shape == (2, 2)
    single = ev.grid_search(fs, ClassifierSpec("svm-rbf"), ev.GridSpec.of(C=[3.0], gamma=[0.5]), plan)
    assert single.best_params == {"C": 3.0, "gamma": 0.5}


def test_grid_search_all_fail():
    y = np.arange(20) % 2
    fs = FeatureSet(np.zeros((20, 2)), y, [str(i) for i in range(20)])
    with pytest.raises(ev.GridSearchError):
        ev.grid_search(fs, ClassifierSpec("knn"), ev.GridSpec.of(k=[50.0]), ev.make_folds(y, 5, 0))


def test_default_grid():
    g = ev.default_grid("rbf")
    assert g.shape == (13, 13) and len(g.cells()) == 169
    assert g.axes[0][1][0] == 1e-2 and g.axes[0][1][-1] == 1e10
    assert g.axes[1][1][0] == 1e-9 and g.axes[1][1][-1] == 1e3
    assert ev.default_grid("linear").shape == (13,)


def test_nested_cv_records_choices(rng):
    y = np.arange(60) % 2
    x = rng.standard_normal((60, 2))
    x[y == 1] += 3
    fs = FeatureSet(x, y, [str(i) for i in range(60)])
    rep = ev.nested_cross_validate(fs, ClassifierSpec("svm-rbf"), ev.GridSpec.of(C=[0.1, 10], gamma=[0.1, 1]),
                                   ev.make_folds(y, 5, 0), inner_folds=3)
    assert len(rep.fold_params) == 5 and all(set(p) == {"C", "gamma"} for p in rep.fold_params)
    assert rep.mean_accuracy > 0.9


def test_learning_curve(rng):
    y = np.arange(50) % 2
    fs = FeatureSet(rng.standard_normal((50, 3)), y, [str(i) for i in range(50)])
    plan = ev.make_folds(y, 5, 0)
    rows = ev.learning_curve(fs, ClassifierSpec("knn"), [0.3, 0.6, 1.0], plan)
    assert [r["fraction"] for r in rows] == [0.3, 0.6, 1.0]
    assert all(r["train_mean"] == 1.0 for r in rows)
    full = ev.cross_validate(fs, ClassifierSpec("knn"), plan)
    assert rows[-1]["val_mean"] == pytest.approx(full.mean_accuracy, abs=1e-15)
    oracle = ev.learning_curve(fs, ClassifierSpec("_oracle", leaked=fs), [0.5, 1.0], plan)
    assert all(r["train_mean"] == r["val_mean"] == 1.0 for r in oracle)
    with pytest.warns(UserWarning, match="one class"):
        skipped = ev.learning_curve(fs, ClassifierSpec("knn"), [0.01], plan)
    assert skipped == []
    with pytest.raises(ConfigError):
        ev.learning_curve(fs, ClassifierSpec("knn"), [1.5], plan)


def test_writers_deterministic(tmp_path, rng):
    fs = FeatureSet(rng.standard_normal((30, 3)), np.arange(30) % 2, [str(i) for i in range(30)])
    rep = ev.cross_validate(fs, ClassifierSpec("knn"), ev.make_folds(fs.labels, 5, 0))
    cfg = {"seed": 0, "classifier": "knn"}
    p1 = ev.write_report(rep, tmp_path / "a", cfg)
    rep2 = ev.cross_validate(fs, ClassifierSpec("knn"), ev.make_folds(fs.labels, 5, 0))
    p2 = ev.write_report(rep2, tmp_path / "b", cfg)
    for k in p1:
        assert p1[k].read_bytes() == p2[k].read_bytes()
    summary = json.loads(p1["summary"].read_text())
    assert summary["config"]["seed"] == 0 and len(summary["fold_accuracy"]) == 5
    text = p1["folds"].read_text()
    assert text.startswith("# classifier=knn\n# seed=0\nfold\taccuracy\n")
