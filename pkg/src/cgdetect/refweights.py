"""Deterministic reference weight set for the ResNet-50 extractor.

Convolution kernels are He-normal draws from a seeded PCG64 stream taken in
architecture-table order.  Spatial kernels (k > 1) then have the mean of each
(out, in) slice removed and are rescaled back to the He standard deviation,
so they respond to edges and texture rather than to local brightness, the way
trained early filters do.  Batch-norm running statistics are then calibrated
layer by layer on a fixed batch of synthetic scenes, so every BN sees
zero-mean unit-variance input on that batch.  The result is written as an
ordinary CGF1 container and consumed exactly like converted pretrained
weights.
"""
from __future__ import annotations

import numpy as np

from . import resnet as R
from . import tensor as T
from .preprocess import DEFAULT_MEAN_RGB, resize_bilinear, to_input_tensor
from .synth import scene_pair
from .weights_io import WeightStore

DEFAULT_SEED = 20180501
CALIBRATION_SCENES = 4


def calibration_batch(seed: int = DEFAULT_SEED, n_scenes: int = CALIBRATION_SCENES) -> np.ndarray:
    imgs = []
    for i in range(n_scenes):
        for img in scene_pair(seed, 10_000 + i):
            imgs.append(to_input_tensor(resize_bilinear(img), DEFAULT_MEAN_RGB))
    return np.concatenate(imgs, axis=0)


def _random_store(seed: int) -> WeightStore:
    rng = np.random.default_rng(seed)
    entries = {}
    for name, shape in R.architecture().items():
        if name.endswith(".kernel"):
            fan_in = shape[1] * shape[2] * shape[3]
            std = np.sqrt(2.0 / fan_in)
            w = rng.standard_normal(shape)
            if shape[2] > 1:
                w = w - w.mean(axis=(2, 3), keepdims=True)
                w = w / w.std()
            entries[name] = (w * std).astype(np.float32)
        elif name.endswith((".gamma", ".running_var")):
            entries[name] = np.ones(shape, dtype=np.float32)
        else:
            entries[name] = np.zeros(shape, dtype=np.float32)
    return WeightStore(entries, {})


def _calibrate(store: WeightStore, prefix: str, h: np.ndarray, eps: float) -> np.ndarray:
    """Set ``prefix`` BN stats from the batch statistics of ``h``; return BN(h)."""
    h64 = h.astype(np.float64)
    mean = h64.mean(axis=(0, 2, 3))
    var = h64.var(axis=(0, 2, 3))
    store.entries[f"{prefix}.running_mean"] = mean.astype(np.float32)
    store.entries[f"{prefix}.running_var"] = var.astype(np.float32)
    bn = T.BatchNormParams(*(store[f"{prefix}.{p}"] for p in R.BN_PARTS), epsilon=eps)
    return T.batchnorm_infer(h, bn)


def make_reference_store(seed: int = DEFAULT_SEED, calib: np.ndarray | None = None) -> WeightStore:
    store = _random_store(seed)
    eps = R.DEFAULT_BN_EPSILON
    x = calibration_batch(seed) if calib is None else calib

    def conv(name, h, stride=1, padding=0):
        return T.conv2d(h, T.ConvParams(store[f"{name}.kernel"], stride=stride, padding=padding))

    h = T.relu(_calibrate(store, "stem.bn", conv("stem.conv", x, 2, 3), eps))
    h = T.maxpool2d(h, (3, 3), stride=2, padding=1)
    for spec in R.block_specs():
        p = spec.name
        f = T.relu(_calibrate(store, f"{p}.bn1", conv(f"{p}.conv1", h, spec.stride), eps))
        f = T.relu(_calibrate(store, f"{p}.bn2", conv(f"{p}.conv2", f, 1, 1), eps))
        f = _calibrate(store, f"{p}.bn3", conv(f"{p}.conv3", f), eps)
        if spec.projection:
            sc = _calibrate(store, f"{p}.shortcut.bn", conv(f"{p}.shortcut.conv", h, spec.stride), eps)
        else:
            sc = h
        h = T.relu(T.add(sc, f))

    store.metadata = {
        "channel_order": "RGB",
        "mean_rgb": ",".join(repr(m) for m in DEFAULT_MEAN_RGB),
        "variant": "original",
        "bn_epsilon": repr(eps),
        "source": "seeded-he-normal-dcfree+bn-calibration",
        "seed": str(seed),
        "calibration_scenes": str(CALIBRATION_SCENES),
    }
    return store
