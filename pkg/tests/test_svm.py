import warnings

import numpy as np
import pytest

from cgdetect import eval as ev
from cgdetect.classifiers import ClassifierSpec, load_model, save_model, train_svm
from cgdetect.classifiers.svm import ConvergenceWarning, dual_objective, kernel_matrix, smo
from cgdetect.errors import ConfigError, DegenerateInputError, ShapeError
from cgdetect.weights_io import FeatureSet
from datasets import circles
from oracles import svm_dual_bruteforce


def test_four_separated_points_linear():
    x = np.array([[0, 0], [0, 1], [3, 0], [3, 1]], np.float64)
    y = np.array([-1.0, -1, 1, 1])
    K = x @ x.T
    res = smo(K, y, C=10.0)
    assert res.converged
    assert abs(dual_objective(res.alpha, y, K) - svm_dual_bruteforce(K, y, 10.0)) <= 1e-3


@pytest.mark.parametrize("seed", range(8))
def test_dual_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 7))
    x = rng.standard_normal((n, 2))
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    C = float(rng.choice([0.1, 1.0, 10.0]))
    for K in (x @ x.T, kernel_matrix(x, x, "rbf", 0.5)):
        res = smo(K, y, C, tol=1e-4)
        assert abs(dual_objective(res.alpha, y, K) - svm_dual_bruteforce(K, y, C)) <= 1e-3


def test_kkt_and_constraints():
    fs = circles(n=200)
    model = train_svm(fs, "rbf", C=10.0, gamma=0.5, standardize=False)
    a = model.diagnostics["alpha"]
    y = np.where(fs.labels == 1, 1.0, -1.0)
    assert model.converged
    assert np.all(a >= 0) and np.all(a <= model.C)
    assert abs(a @ y) <= 1e-6
    assert model.kkt_violation <= 10 * model.tol
    f = model.decision_function(fs.features)
    free = (a > 0) & (a < model.C)
    assert free.any()
    assert np.max(np.abs(y[free] * f[free] - 1)) <= 10 * model.tol


def test_circles_training_accuracy():
    fs = circles(n=100)
    best = 0.0
    for gamma in (0.001, 0.01, 0.1, 1.0):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            labels, _ = train_svm(fs, "rbf", C=10.0, gamma=gamma).predict(fs.features)
        best = max(best, float(np.mean(labels == fs.labels)))
    assert best >= 0.95


def test_duplicate_rows_same_function():
    fs = circles(n=60, seed=3)
    doubled = FeatureSet(np.concatenate([fs.features, fs.features]), np.concatenate([fs.labels, fs.labels]),
                         fs.ids + [i + "'" for i in fs.ids])
    probe = np.stack(np.meshgrid(np.linspace(-3, 3, 9), np.linspace(-3, 3, 9)), -1).reshape(-1, 2)
    m1 = train_svm(fs, "rbf", C=1.0, gamma=0.5, tol=1e-6, standardize=False)
    m2 = train_svm(doubled, "rbf", C=0.5, gamma=0.5, tol=1e-6, standardize=False)
    # halving C with every row doubled leaves the primal problem unchanged
    np.testing.assert_allclose(m1.decision_function(probe), m2.decision_function(probe), atol=1e-4)
    m3 = train_svm(doubled, "rbf", C=0.5, gamma=0.5, tol=1e-6, standardize=False)
    np.testing.assert_array_equal(m2.decision_function(probe), m3.decision_function(probe))


def test_round_trip_and_batching(tmp_path):
    fs = circles(n=80)
    model = train_svm(fs, "rbf", C=10.0, gamma=0.5)
    save_model(model, tmp_path / "s.cgf")
    back = load_model(tmp_path / "s.cgf")
    np.testing.assert_array_equal(back.predict(fs.features)[1], model.predict(fs.features)[1])
    single = np.concatenate([model.predict(fs.features[i:i + 1])[1] for i in range(10)])
    np.testing.assert_allclose(single, model.predict(fs.features[:10])[1], rtol=0, atol=1e-12)
    with pytest.raises(ShapeError):
        model.predict(np.zeros((2, 3)))


def test_linear_kernel_separates():
    x = np.array([[0, 0], [1, 0], [4, 4], [5, 4]], np.float32)
    model = train_svm(FeatureSet(x, [0, 0, 1, 1], list("abcd")), "linear", C=100.0, standardize=False)
    assert model.predict(x)[0].tolist() == [0, 0, 1, 1]
    assert model.gamma is None


def test_non_convergence_warns():
    fs = circles(n=100)
    with pytest.warns(ConvergenceWarning):
        m = train_svm(fs, "rbf", C=1e6, gamma=100.0, max_passes=1, max_steps=5)
    assert not m.converged


def test_errors():
    fs = circles(n=20)
    with pytest.raises(ConfigError):
        train_svm(fs, "rbf", C=1.0, gamma=None)
    with pytest.raises(ConfigError):
        train_svm(fs, "linear", C=0.0)
    with pytest.raises(ConfigError):
        train_svm(fs, "poly", C=1.0)
    with pytest.raises(DegenerateInputError):
        train_svm(FeatureSet(np.zeros((3, 2)), [0, 0, 0], list("abc")), "linear", C=1.0)


def test_circles_cv_some_cell():
    fs = circles(n=200)
    plan = ev.make_folds(fs.labels, 5, 0)
    grid = ev.GridSpec.of(C=[1.0, 10.0], gamma=[0.1, 1.0])
    res = ev.grid_search(fs, ClassifierSpec("svm-rbf"), grid, plan)
    assert res.best_score >= 0.95
