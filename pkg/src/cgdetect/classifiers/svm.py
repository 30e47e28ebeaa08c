"""Soft-margin SVM trained with Platt's sequential minimal optimization.

Decision function: ``f(x) = sum_i alpha_i y_i k(x_i, x) + b`` with
``y_i in {-1, +1}`` (CG = +1).  The Gram matrix is precomputed once, and the
error cache ``E_i = f(x_i) - y_i`` is kept current for every training row
after each successful pair update.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..errors import ConfigError
from ..weights_io import FeatureSet, WeightStore
from .base import Standardizer, check_binary, predict_labels

log = logging.getLogger(__name__)

ALPHA_EPS = 1e-8


class ConvergenceWarning(UserWarning):
    pass


def kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: str, gamma: Optional[float]) -> np.ndarray:
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    dot = a @ b.T
    if kernel == "linear":
        return dot
    if kernel == "rbf":
        sq = (a * a).sum(axis=1)[:, None] - 2.0 * dot + (b * b).sum(axis=1)[None, :]
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ConfigError(f"unknown kernel {kernel!r}")


@dataclass
class SmoResult:
    alpha: np.ndarray
    b: float
    converged: bool
    steps: int
    sweeps: int
    kkt_violation: float


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


class _Smo:
    def __init__(self, K, y, C, tol, seed, max_steps):
        self.K = K
        self.y = y
        self.C = C
        self.tol = tol
        self.n = len(y)
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.E = -y.astype(np.float64)  # f(x)=0 initially
        self.rng = np.random.default_rng(seed)
        self.steps = 0
        self.max_steps = max_steps

    def _violates(self, i) -> bool:
        r = self.E[i] * self.y[i]
        a = self.alpha[i]
        return (r < -self.tol and a < self.C) or (r > self.tol and a > 0)

    def take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        K, y, C = self.K, self.y, self.C
        a1, a2 = self.alpha[i1], self.alpha[i2]
        y1, y2 = y[i1], y[i2]
        E1, E2 = self.E[i1], self.E[i2]
        s = y1 * y2
        if s < 0:
            L, H = max(0.0, a2 - a1), min(C, C + a2 - a1)
        else:
            L, H = max(0.0, a1 + a2 - C), min(C, a1 + a2)
        if H - L < ALPHA_EPS:
            return False
        k11, k12, k22 = K[i1, i1], K[i1, i2], K[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > 1e-12:
            a2n = min(max(a2 + y2 * (E1 - E2) / eta, L), H)
        else:
            # objective is linear along the constraint line; take the better end
            f1 = y1 * (E1 - self.b) - a1 * k11 - s * a2 * k12
            f2 = y2 * (E2 - self.b) - s * a1 * k12 - a2 * k22
            L1 = a1 + s * (a2 - L)
            H1 = a1 + s * (a2 - H)
            obj_l = L1 * f1 + L * f2 + 0.5 * L1 * L1 * k11 + 0.5 * L * L * k22 + s * L * L1 * k12
            obj_h = H1 * f1 + H * f2 + 0.5 * H1 * H1 * k11 + 0.5 * H * H * k22 + s * H * H1 * k12
            if obj_l < obj_h - 1e-12:
                a2n = L
            elif obj_l > obj_h + 1e-12:
                a2n = H
            else:
                a2n = a2
        hi_snap = C - ALPHA_EPS * max(1.0, C * 1e-8)
        if a2n < ALPHA_EPS:
            a2n = 0.0
        elif a2n > hi_snap:
            a2n = C
        if abs(a2n - a2) < ALPHA_EPS * (a2n + a2 + ALPHA_EPS):
            return False
        a1n = a1 + s * (a2 - a2n)
        if a1n < ALPHA_EPS:
            a2n += s * a1n
            a1n = 0.0
        elif a1n > hi_snap:
            a2n += s * (a1n - C)
            a1n = C

        d1 = y1 * (a1n - a1)
        d2 = y2 * (a2n - a2)
        b1 = self.b - E1 - d1 * k11 - d2 * k12
        b2 = self.b - E2 - d1 * k12 - d2 * k22
        if 0 < a1n < C:
            bn = b1
        elif 0 < a2n < C:
            bn = b2
        else:
            bn = 0.5 * (b1 + b2)
        self.E += d1 * K[:, i1] + d2 * K[:, i2] + (bn - self.b)
        self.b = bn
        self.alpha[i1] = a1n
        self.alpha[i2] = a2n
        self.steps += 1
        return True

    def examine(self, i2: int) -> bool:
        if not self._violates(i2):
            return False
        free = np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))
        E2 = self.E[i2]
        if free.size > 1:
            i1 = int(free[np.argmax(np.abs(self.E[free] - E2))])
            if self.take_step(i1, i2):
                return True
        if free.size:
            start = int(self.rng.integers(free.size))
            for i1 in np.roll(free, -start):
                if self.take_step(int(i1), i2):
                    return True
        start = int(self.rng.integers(self.n))
        for i1 in np.roll(np.arange(self.n), -start):
            if self.take_step(int(i1), i2):
                return True
        return False

    def run(self, max_passes: int) -> Tuple[bool, int]:
        # converged once a full sweep changes nothing; max_passes caps full sweeps
        examine_all = True
        sweeps = 0
        full_sweeps = 0
        while True:
            if self.steps >= self.max_steps:
                return False, sweeps
            if examine_all:
                if full_sweeps >= max_passes:
                    return False, sweeps
                full_sweeps += 1
                candidates = range(self.n)
            else:
                candidates = np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))
            changed = 0
            for i in candidates:
                changed += self.examine(int(i))
                if self.steps >= self.max_steps:
                    break
            sweeps += 1
            if examine_all:
                if changed == 0:
                    return True, sweeps
                examine_all = False
            elif changed == 0:
                examine_all = True

    def kkt_violation(self) -> float:
        r = self.E * self.y
        lo = self.alpha < self.C
        hi = self.alpha > 0
        v = np.zeros(self.n)
        v[lo] = np.maximum(v[lo], -r[lo])
        v[hi] = np.maximum(v[hi], r[hi])
        return float(v.max(initial=0.0))


def smo(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_passes: int = 100,
        seed: int = 0, max_steps: Optional[int] = None) -> SmoResult:
    """Solve the SVM dual for Gram matrix ``K`` and labels ``y`` in {-1, +1}."""
    y = np.asarray(y, dtype=np.float64)
    if max_steps is None:
        max_steps = 200 * len(y) + 10_000
    solver = _Smo(np.asarray(K, dtype=np.float64), y, float(C), tol, seed, max_steps)
    converged, sweeps = solver.run(max_passes)
    solver.E = solver.K @ (solver.alpha * y) + solver.b - y
    return SmoResult(solver.alpha, solver.b, converged, solver.steps, sweeps, solver.kkt_violation())


@dataclass
class SvmModel:
    kernel: str
    C: float
    gamma: Optional[float]
    support_vectors: np.ndarray  # float32, standardized space
    dual_coef: np.ndarray  # alpha_i * y_i, float32
    intercept: float
    standardizer: Standardizer
    tol: float = 1e-3
    max_passes: int = 100
    converged: bool = True
    kkt_violation: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    threshold = 0.0

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        x = self.standardizer.transform(features)
        if self.support_vectors.shape[0] == 0:
            return np.full(x.shape[0], self.intercept)
        K = kernel_matrix(x, self.support_vectors, self.kernel, self.gamma)
        return K @ self.dual_coef.astype(np.float64) + self.intercept

    def predict(self, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        scores = self.decision_function(features)
        return predict_labels(scores, self.threshold), scores

    def to_store(self) -> WeightStore:
        md = {
            "classifier": "svm",
            "kernel": self.kernel,
            "C": repr(float(self.C)),
            "gamma": repr(float(self.gamma)) if self.gamma is not None else "",
            "intercept": repr(float(self.intercept)),
            "tol": repr(float(self.tol)),
            "max_passes": str(self.max_passes),
            "converged": str(self.converged),
            "kkt_violation": repr(float(self.kkt_violation)),
        }
        return WeightStore({"svm.support_vectors": self.support_vectors, "svm.dual_coef": self.dual_coef,
                            **self.standardizer.entries()}, md)

    @classmethod
    def from_store(cls, store: WeightStore) -> "SvmModel":
        md = store.metadata
        return cls(
            kernel=md["kernel"], C=float(md["C"]), gamma=float(md["gamma"]) if md.get("gamma") else None,
            support_vectors=np.array(store["svm.support_vectors"]), dual_coef=np.array(store["svm.dual_coef"]),
            intercept=float(md["intercept"]), standardizer=Standardizer.from_store(store),
            tol=float(md.get("tol", 1e-3)), max_passes=int(md.get("max_passes", 100)),
            converged=md.get("converged", "True") == "True", kkt_violation=float(md.get("kkt_violation", 0.0)),
        )


def train_svm(fs: FeatureSet, kernel: str = "rbf", C: float = 1.0, gamma: Optional[float] = None,
              tol: float = 1e-3, max_passes: int = 100, seed: int = 0, standardize: bool = True,
              max_steps: Optional[int] = None) -> SvmModel:
    check_binary(fs, "SVM")
    if C <= 0:
        raise ConfigError(f"C must be positive, got {C}")
    if kernel == "rbf" and (gamma is None or gamma <= 0):
        raise ConfigError(f"rbf kernel needs gamma > 0, got {gamma}")
    if kernel not in ("linear", "rbf"):
        raise ConfigError(f"unknown kernel {kernel!r}")
    st = Standardizer.fit(fs.features, standardize)
    x = st.transform(fs.features)
    y = np.where(fs.labels == 1, 1.0, -1.0)
    K = kernel_matrix(x, x, kernel, gamma)
    res = smo(K, y, C, tol=tol, max_passes=max_passes, seed=seed, max_steps=max_steps)
    if not res.converged:
        warnings.warn(f"SMO stopped before convergence (C={C}, gamma={gamma}, "
                      f"kkt violation {res.kkt_violation:.3g})", ConvergenceWarning, stacklevel=2)
    sv = res.alpha > 0
    return SvmModel(
        kernel=kernel, C=C, gamma=gamma if kernel == "rbf" else None,
        support_vectors=x[sv], dual_coef=(res.alpha[sv] * y[sv]).astype(np.float32),
        intercept=res.b, standardizer=st, tol=tol, max_passes=max_passes,
        converged=res.converged, kkt_violation=res.kkt_violation,
        diagnostics={"alpha": res.alpha, "steps": res.steps, "sweeps": res.sweeps,
                     "dual_objective": dual_objective(res.alpha, y, K)},
    )
