"""Exact O(n^2) t-SNE for 2-D visualization of feature spaces."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

PERPLEXITY_TOL = 1e-3
MAX_SEARCH_STEPS = 100
P_FLOOR = 1e-12
MIN_GAIN = 0.01


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: Union[float, str] = "auto"
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    pca_dims: Optional[int] = 50
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 250:
            raise ConfigError(f"t-SNE needs at least 250 iterations, got {self.iterations}")
        if self.perplexity <= 0:
            raise ConfigError("perplexity must be positive")
        if self.learning_rate != "auto" and not float(self.learning_rate) > 0:
            raise ConfigError(f"learning_rate must be positive or 'auto', got {self.learning_rate!r}")

    def resolved_learning_rate(self, n: int) -> float:
        # "auto" scales with n and equals 200 at n = 9600
        if self.learning_rate == "auto":
            return max(n / self.early_exaggeration / 4.0, 50.0)
        return float(self.learning_rate)


class Calibration(NamedTuple):
    beta: float  # precision 1 / (2 sigma^2) on squared distances
    probs: np.ndarray
    perplexity: float
    converged: bool


def _row_probs(d: np.ndarray, beta: float):
    shifted = d - d.min()
    p = np.exp(-beta * shifted)
    s = p.sum()
    p /= s
    nz = p > 0
    h_bits = -np.sum(p[nz] * np.log2(p[nz]))
    return p, float(2.0 ** h_bits)


def perplexity_calibration(sq_distances: Sequence[float], target: float) -> Calibration:
    """Binary-search the Gaussian precision so the row perplexity hits ``target``.

    ``sq_distances`` are squared distances to every *other* point.
    """
    d = np.asarray(sq_distances, dtype=np.float64)
    n = d.shape[0]
    if n < 1:
        raise ConfigError("calibration needs at least one neighbour")
    if not 1.0 <= target <= n:
        raise ConfigError(f"perplexity {target} infeasible with {n} neighbours")
    lo, hi = 0.0, np.inf
    scale = np.median(d[d > d.min()]) if np.any(d > d.min()) else 1.0
    beta = 1.0 / max(scale, 1e-300)
    best = None
    for _ in range(MAX_SEARCH_STEPS):
        p, perp = _row_probs(d, beta)
        err = perp - target
        if best is None or abs(err) < abs(best[2] - target):
            best = (beta, p, perp)
        if abs(err) <= PERPLEXITY_TOL:
            return Calibration(beta, p, perp, True)
        if err > 0:  # too flat: sharpen
            lo = beta
            beta = beta * 2.0 if np.isinf(hi) else (beta + hi) / 2.0
        else:
            hi = beta
            beta = (beta + lo) / 2.0
    warnings.warn(f"perplexity search stopped at {best[2]:.6g} (target {target})", RuntimeWarning, stacklevel=2)
    return Calibration(best[0], best[1], best[2], False)


def _sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] - 2.0 * (x @ x.T) + sq[None, :]
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def joint_probabilities(x: np.ndarray, perplexity: float) -> np.ndarray:
    n = x.shape[0]
    d = _sq_dists(x)
    p = np.zeros((n, n))
    for i in range(n):
        others = np.r_[0:i, i + 1:n]
        p[i, others] = perplexity_calibration(d[i, others], perplexity).probs
    p = (p + p.T) / (2.0 * n)
    return p


def pca(x: np.ndarray, dims: int) -> np.ndarray:
    xc = x - x.mean(axis=0)
    u, s, _ = np.linalg.svd(xc, full_matrices=False)
    k = min(dims, s.shape[0])
    return u[:, :k] * s[:k]


def kl_divergence(p: np.ndarray, y: np.ndarray) -> float:
    num = 1.0 / (1.0 + _sq_dists(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), P_FLOOR)
    pp = np.maximum(p, P_FLOOR)
    return float(np.sum(p * np.log(pp / q)))


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl_history: List[float] = field(default_factory=list)
    p: Optional[np.ndarray] = None


def _canonical_order(x: np.ndarray) -> np.ndarray:
    return np.lexsort(x.T[::-1])


def embed_full(points: np.ndarray, cfg: TsneConfig = TsneConfig()) -> TsneResult:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 10:
        raise ConfigError(f"t-SNE needs an (n >= 10, d) matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ConfigError("t-SNE input contains non-finite values")
    n = x.shape[0]
    if not cfg.perplexity < (n - 1) / 3:
        raise ConfigError(f"perplexity {cfg.perplexity} must be below (n-1)/3 = {(n - 1) / 3:.3g}")

    order = _canonical_order(x)
    xs = x[order]
    if cfg.pca_dims and xs.shape[1] > cfg.pca_dims:
        xs = pca(xs, cfg.pca_dims)
    P = joint_probabilities(xs, cfg.perplexity)
    Pm = np.maximum(P, P_FLOOR)
    np.fill_diagonal(Pm, 0.0)

    lr = cfg.resolved_learning_rate(n)
    rng = np.random.default_rng(cfg.seed)
    y = rng.normal(0.0, 1e-4, (n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    history = []
    for it in range(cfg.iterations):
        exag = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        mom = cfg.momentum if it < cfg.momentum_switch else cfg.final_momentum
        num = 1.0 / (1.0 + _sq_dists(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), P_FLOOR)
        w = (exag * Pm - q) * num
        grad = 4.0 * (np.diag(w.sum(axis=1)) - w) @ y
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, MIN_GAIN, out=gains)
        update = mom * update - lr * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
        history.append(float(np.sum(Pm * np.log(np.maximum(Pm, P_FLOOR) / q))))
    out = np.empty_like(y)
    out[order] = y
    return TsneResult(out, history, P)


def embed(points: np.ndarray, cfg: TsneConfig = TsneConfig()) -> np.ndarray:
    """(n, 2) embedding of ``points``."""
    return embed_full(points, cfg).embedding


def write_embedding(path, ids: Sequence[str], labels: Sequence[int], y: np.ndarray, header: str = "") -> None:
    lines = [header, "id\tlabel\tx\ty\n"]
    names = {1: "cg", 0: "pg"}
    for i, l, (a, b) in zip(ids, labels, y):
        lines.append(f"{i}\t{names.get(int(l), l)}\t{float(a)!r}\t{float(b)!r}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")
