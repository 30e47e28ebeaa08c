"""One-time fixture generation for the forward-pass acceptance test.

Loads a CGF1 weight container into torchvision's ResNet-50 (strides moved to
the first 1x1 convolution of each downsampling block), runs it on the
reference input tensor and stores the 2048-dim average-pool activation.

    python tools/make_reference_fixture.py [--weights ref.cgf] [--out tests/data]

Without ``--weights`` the deterministic reference store is regenerated.
Requires torch and torchvision; the package itself does not.
"""
import argparse
from pathlib import Path

import numpy as np
import torch
import torchvision

from cgdetect import refweights, resnet, weights_io
from cgdetect.preprocess import DEFAULT_MEAN_RGB, parse_means, resize_bilinear, to_input_tensor
from cgdetect.synth import scene_pair

REFERENCE_SCENE = 20_000


def reference_input(seed=refweights.DEFAULT_SEED, store=None):
    cg, _ = scene_pair(seed, REFERENCE_SCENE)
    if store is None:
        return to_input_tensor(resize_bilinear(cg))
    means = parse_means(store.metadata.get("mean_rgb", ",".join(map(str, DEFAULT_MEAN_RGB))))
    return to_input_tensor(resize_bilinear(cg), means, store.metadata.get("channel_order", "RGB"))


def torch_model(store):
    model = torchvision.models.resnet50(weights=None)
    sd = {}

    def bn(dst, src):
        for a, b in (("weight", "gamma"), ("bias", "beta"),
                     ("running_mean", "running_mean"), ("running_var", "running_var")):
            sd[f"{dst}.{a}"] = torch.from_numpy(np.array(store[f"{src}.{b}"]))

    sd["conv1.weight"] = torch.from_numpy(np.array(store["stem.conv.kernel"]))
    bn("bn1", "stem.bn")
    for spec in resnet.block_specs():
        s, b = spec.name.split(".")
        layer = int(s[len("stage"):])
        idx = int(b[len("block"):]) - 1
        dst = f"layer{layer}.{idx}"
        block = getattr(model, f"layer{layer}")[idx]
        if spec.stride == 2:
            block.conv1.stride = (2, 2)
            block.conv2.stride = (1, 1)
        for k in (1, 2, 3):
            sd[f"{dst}.conv{k}.weight"] = torch.from_numpy(np.array(store[f"{spec.name}.conv{k}.kernel"]))
            bn(f"{dst}.bn{k}", f"{spec.name}.bn{k}")
        if spec.projection:
            sd[f"{dst}.downsample.0.weight"] = torch.from_numpy(
                np.array(store[f"{spec.name}.shortcut.conv.kernel"]))
            bn(f"{dst}.downsample.1", f"{spec.name}.shortcut.bn")
    for k in list(model.state_dict()):
        if k.endswith("num_batches_tracked"):
            sd[k] = model.state_dict()[k]
    sd["fc.weight"] = model.fc.weight.detach()
    sd["fc.bias"] = model.fc.bias.detach()
    model.load_state_dict(sd, strict=True)
    eps = float(store.metadata.get("bn_epsilon", resnet.DEFAULT_BN_EPSILON))
    for m in model.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            m.eps = eps
    model.fc = torch.nn.Identity()
    return model.eval()


def torch_features(store, x):
    torch.set_num_threads(1)
    with torch.no_grad():
        return torch_model(store)(torch.from_numpy(x)).numpy()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--weights")
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "data"))
    args = ap.parse_args()
    store = weights_io.load_weights(args.weights) if args.weights else refweights.make_reference_store()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x = reference_input(store=store)
    feats = torch_features(store, x)
    md = {"source": f"torchvision {torchvision.__version__} / torch {torch.__version__}",
          "weights_digest": store.digest(), "reference_scene": str(REFERENCE_SCENE)}
    weights_io.save_weights(weights_io.WeightStore({"input": x}, md), out / "reference_input.cgf")
    weights_io.save_weights(weights_io.WeightStore({"activation": feats}, md), out / "reference_activation.cgf")
    print(f"wrote fixtures to {out}; activation mean {feats.mean():.6f}")


if __name__ == "__main__":
    main()
