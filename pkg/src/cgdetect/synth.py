"""Synthetic CG-like / PG-like scene generator.

CG-like images are flat-shaded linear gradients with hard geometric edges.
The PG-like twin of a scene is the same raster after a slight binomial blur
and additive Gaussian sensor noise.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Tuple

import numpy as np

from .preprocess import RgbImage, write_ppm


def _gradient(rng, h, w):
    c0 = rng.uniform(0, 255, 3)
    c1 = rng.uniform(0, 255, 3)
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    t = (np.cos(theta) * xx / w + np.sin(theta) * yy / h)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    return c0 + (c1 - c0) * t[..., None]


def _mask(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    kind = rng.integers(3)
    cx, cy = rng.uniform(0, w), rng.uniform(0, h)
    size = rng.uniform(0.1, 0.4) * min(h, w)
    if kind == 0:
        return (np.abs(xx - cx) < size) & (np.abs(yy - cy) < size * rng.uniform(0.4, 1.2))
    if kind == 1:
        return (xx - cx) ** 2 + (yy - cy) ** 2 < size ** 2
    pts = np.array([cx, cy]) + rng.uniform(-size, size, (3, 2)) * 1.5
    sides = []
    for i in range(3):
        (x0, y0), (x1, y1) = pts[i], pts[(i + 1) % 3]
        sides.append((x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0)
    return (sides[0] & sides[1] & sides[2]) | ~(sides[0] | sides[1] | sides[2])


def cg_scene(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Float64 (h, w, 3) raster of a gradient background with hard-edged shapes."""
    img = _gradient(rng, height, width)
    for _ in range(int(rng.integers(3, 7))):
        m = _mask(rng, height, width)
        img[m] = _gradient(rng, height, width)[m]
    return img


def _blur(img: np.ndarray) -> np.ndarray:
    k = np.array([0.25, 0.5, 0.25])
    p = np.pad(img, ((1, 1), (0, 0), (0, 0)), mode="edge")
    img = k[0] * p[:-2] + k[1] * p[1:-1] + k[2] * p[2:]
    p = np.pad(img, ((0, 0), (1, 1), (0, 0)), mode="edge")
    return k[0] * p[:, :-2] + k[1] * p[:, 1:-1] + k[2] * p[:, 2:]


def _quantize(img: np.ndarray) -> RgbImage:
    return RgbImage(np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8))


def scene_pair(seed: int, index: int, noise_sigma: float = 4.0) -> Tuple[RgbImage, RgbImage]:
    """(CG-like, PG-like) renderings of scene ``index``."""
    rng = np.random.default_rng([seed, index])
    h = int(rng.integers(150, 300))
    w = int(rng.integers(150, 300))
    scene = cg_scene(rng, h, w)
    noisy = _blur(scene) + rng.normal(0.0, noise_sigma, scene.shape)
    return _quantize(scene), _quantize(noisy)


def write_dataset(out_dir, n_scenes: int, seed: int = 0) -> Path:
    """Write ``2 * n_scenes`` PPM files plus ``manifest.tsv``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines: List[str] = []
    for i in range(n_scenes):
        cg, pg = scene_pair(seed, i)
        for tag, img in (("cg", cg), ("pg", pg)):
            name = f"{tag}_{i:04d}.ppm"
            write_ppm(img, out / name)
            lines.append(f"{name}\t{tag}\t{tag}_{i:04d}")
    manifest = out / "manifest.tsv"
    manifest.write_text("".join(l + "\n" for l in lines))
    return manifest
