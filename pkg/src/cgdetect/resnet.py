"""Frozen ResNet-50 bottleneck-feature extractor.

The network is the canonical [3, 4, 6, 3] bottleneck layout with projection
shortcuts on the first block of every stage and the stride-2 downsampling on
the first 1x1 convolution of that block.  The 1000-way classification layer
is never built: ``extract`` stops at the global average pool and returns the
2048-dim bottleneck features.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import FormatError, ShapeError
from .weights_io import WeightStore

STAGE_BLOCKS = (3, 4, 6, 3)
STAGE_WIDTHS = (64, 128, 256, 512)
EXPANSION = 4
STEM_WIDTH = 64
INPUT_SIZE = 224
FEATURE_DIM = STAGE_WIDTHS[-1] * EXPANSION
BN_PARTS = ("gamma", "beta", "running_mean", "running_var")
DEFAULT_BN_EPSILON = 1e-5


@dataclass(frozen=True)
class BlockSpec:
    name: str
    in_ch: int
    mid_ch: int
    out_ch: int
    stride: int
    projection: bool


def block_specs() -> List[BlockSpec]:
    specs = []
    in_ch = STEM_WIDTH
    for s, (nblocks, mid) in enumerate(zip(STAGE_BLOCKS, STAGE_WIDTHS), start=1):
        out = mid * EXPANSION
        for b in range(1, nblocks + 1):
            first = b == 1
            stride = 2 if (first and s > 1) else 1
            specs.append(BlockSpec(f"stage{s}.block{b}", in_ch, mid, out, stride, projection=first))
            in_ch = out
    return specs


def _bn_entries(prefix: str, c: int) -> Iterator[Tuple[str, Tuple[int, ...]]]:
    for part in BN_PARTS:
        yield f"{prefix}.{part}", (c,)


def architecture() -> "OrderedDict[str, Tuple[int, ...]]":
    """Every tensor name the model consumes, with its exact shape."""
    table: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    table["stem.conv.kernel"] = (STEM_WIDTH, 3, 7, 7)
    table.update(_bn_entries("stem.bn", STEM_WIDTH))
    for spec in block_specs():
        p = spec.name
        table[f"{p}.conv1.kernel"] = (spec.mid_ch, spec.in_ch, 1, 1)
        table.update(_bn_entries(f"{p}.bn1", spec.mid_ch))
        table[f"{p}.conv2.kernel"] = (spec.mid_ch, spec.mid_ch, 3, 3)
        table.update(_bn_entries(f"{p}.bn2", spec.mid_ch))
        table[f"{p}.conv3.kernel"] = (spec.out_ch, spec.mid_ch, 1, 1)
        table.update(_bn_entries(f"{p}.bn3", spec.out_ch))
        if spec.projection:
            table[f"{p}.shortcut.conv.kernel"] = (spec.out_ch, spec.in_ch, 1, 1)
            table.update(_bn_entries(f"{p}.shortcut.bn", spec.out_ch))
    return table


@dataclass(frozen=True)
class BottleneckBlock:
    name: str
    conv1: T.ConvParams
    bn1: T.BatchNormParams
    conv2: T.ConvParams
    bn2: T.BatchNormParams
    conv3: T.ConvParams
    bn3: T.BatchNormParams
    shortcut: Optional[Tuple[T.ConvParams, T.BatchNormParams]] = None

    @property
    def in_channels(self) -> int:
        return self.conv1.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.conv3.kernel.shape[0]

    @property
    def stride(self) -> int:
        return self.conv1.stride

    def __post_init__(self):
        if self.shortcut is None and (self.in_channels != self.out_channels or self.stride != 1):
            raise ShapeError(
                f"{self.name}: identity shortcut needs matching shapes "
                f"(in={self.in_channels}, out={self.out_channels}, stride={self.stride})"
            )
        if self.shortcut is not None and self.shortcut[0].stride != self.stride:
            raise ShapeError(f"{self.name}: projection stride must equal block stride {self.stride}")


def block_forward(block: BottleneckBlock, x: np.ndarray) -> np.ndarray:
    """relu(shortcut(x) + F(x)) for one bottleneck block."""
    x = T.as_tensor(x)
    if x.shape[1] != block.in_channels:
        raise ShapeError(f"{block.name}: expected {block.in_channels} input channels, got {x.shape[1]}")
    h = T.relu(T.batchnorm_infer(T.conv2d(x, block.conv1), block.bn1))
    h = T.relu(T.batchnorm_infer(T.conv2d(h, block.conv2), block.bn2))
    h = T.batchnorm_infer(T.conv2d(h, block.conv3), block.bn3)
    if block.shortcut is None:
        sc = x
    else:
        conv, bn = block.shortcut
        sc = T.batchnorm_infer(T.conv2d(x, conv), bn)
    return T.relu(T.add(sc, h))


@dataclass(frozen=True)
class ResNet50:
    stem_conv: T.ConvParams
    stem_bn: T.BatchNormParams
    stages: Tuple[Tuple[BottleneckBlock, ...], ...]
    metadata: Tuple[Tuple[str, str], ...] = ()

    @property
    def weighted_layers(self) -> int:
        # stem conv + three convs per block; projection shortcuts are not counted
        return 1 + 3 * sum(len(s) for s in self.stages)

    def blocks(self) -> Iterator[BottleneckBlock]:
        for stage in self.stages:
            yield from stage

    def stem_forward(self, x: np.ndarray) -> np.ndarray:
        h = T.relu(T.batchnorm_infer(T.conv2d(x, self.stem_conv), self.stem_bn))
        return T.maxpool2d(h, (3, 3), stride=2, padding=1)

    def forward_stages(self, x: np.ndarray) -> List[np.ndarray]:
        """Stem output followed by the output of each of the four stages."""
        outs = [self.stem_forward(x)]
        h = outs[0]
        for stage in self.stages:
            for block in stage:
                h = block_forward(block, h)
            outs.append(h)
        return outs


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float32, copy=True)
    out.setflags(write=False)
    return out


def build(store: WeightStore) -> ResNet50:
    """Assemble a frozen ResNet50 from every tensor in the architecture table."""
    table = architecture()
    missing = [n for n in table if n not in store]
    if missing:
        more = f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""
        raise KeyError(f"weight store is missing tensor {missing[0]!r}{more}")
    for name, shape in table.items():
        found = tuple(store[name].shape)
        if found != shape:
            raise ShapeError(f"tensor {name!r}: expected shape {shape}, found {found}")

    variant = store.metadata.get("variant", "original")
    if variant != "original":
        # a stride on the 3x3 conv gives different features from the same tensors
        raise FormatError(f"weight variant {variant!r} not supported; only 'original' (stride on the first 1x1)")
    eps = float(store.metadata.get("bn_epsilon", DEFAULT_BN_EPSILON))

    def conv(prefix, stride=1, padding=0):
        return T.ConvParams(_frozen(store[f"{prefix}.kernel"]), stride=stride, padding=padding)

    def bn(prefix):
        return T.BatchNormParams(*(_frozen(store[f"{prefix}.{p}"]) for p in BN_PARTS), epsilon=eps)

    stages: List[List[BottleneckBlock]] = [[] for _ in STAGE_BLOCKS]
    for spec in block_specs():
        p = spec.name
        shortcut = None
        if spec.projection:
            shortcut = (conv(f"{p}.shortcut.conv", stride=spec.stride), bn(f"{p}.shortcut.bn"))
        block = BottleneckBlock(
            name=p,
            conv1=conv(f"{p}.conv1", stride=spec.stride),
            bn1=bn(f"{p}.bn1"),
            conv2=conv(f"{p}.conv2", padding=1),
            bn2=bn(f"{p}.bn2"),
            conv3=conv(f"{p}.conv3"),
            bn3=bn(f"{p}.bn3"),
            shortcut=shortcut,
        )
        stage_idx = int(p.split(".")[0][len("stage"):]) - 1
        stages[stage_idx].append(block)

    return ResNet50(
        stem_conv=conv("stem.conv", stride=2, padding=3),
        stem_bn=bn("stem.bn"),
        stages=tuple(tuple(s) for s in stages),
        metadata=tuple(sorted(store.metadata.items())),
    )


def extract(model: ResNet50, batch: np.ndarray) -> np.ndarray:
    """Bottleneck features, shape (n, 2048), for a preprocessed (n, 3, 224, 224) batch."""
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[1:] != (3, INPUT_SIZE, INPUT_SIZE):
        raise ShapeError(f"extract expects (n, 3, {INPUT_SIZE}, {INPUT_SIZE}), got {batch.shape}")
    out = np.empty((batch.shape[0], FEATURE_DIM), dtype=np.float32)
    # one image at a time keeps the im2col buffers small
    for i in range(batch.shape[0]):
        h = model.forward_stages(batch[i:i + 1])[-1]
        out[i] = T.global_avg_pool(h).reshape(FEATURE_DIM)
    return out
