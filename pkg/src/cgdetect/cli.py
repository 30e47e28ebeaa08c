"""Command-line front end: ingest -> extract -> train -> evaluate -> visualize.

Exit codes: 0 success, 1 usage/configuration, 2 data or format problem,
3 numerical failure.  Outputs carry the resolved configuration and seed;
wall-clock timings go to a ``.log`` sidecar so primary outputs stay
byte-identical across identical runs.
"""
from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import eval as ev
from . import preprocess, refweights, resnet, synth, tsne
from .classifiers import CLASSIFIERS, ClassifierSpec, load_model, save_model
from .errors import CGDetectError, ConfigError, FormatError, NumericalError, ShapeError
from .weights_io import FeatureSet, load_features, load_weights, save_features, save_weights

log = logging.getLogger("cgdetect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS: Dict[str, Any] = {
    "classifier": "svm-rbf",
    "folds": 5,
    "seed": 0,
    "jobs": 1,
    "strict": False,
    "no_standardize": False,
    "gridsearch": False,
    "scenes": 10,
    "grid": "log",
    "perplexity": 30.0,
    "iterations": 1000,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config_file(path) -> Dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _coerce(key: str, value: str):
    default = DEFAULTS.get(key)
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def resolve(args: argparse.Namespace) -> Dict[str, Any]:
    """Flags > config file > defaults."""
    file_cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    defaults = {**DEFAULTS, **getattr(args, "command_defaults", {})}
    cfg: Dict[str, Any] = {}
    for key, value in vars(args).items():
        if key in ("func", "config", "command_defaults"):
            continue
        if value is None or (value is False and key in defaults):
            if key in file_cfg:
                value = _coerce(key, file_cfg[key])
            elif key in defaults:
                value = defaults[key]
        cfg[key] = value
    if "param" in cfg:
        params = dict(p.split("=", 1) for p in file_cfg.get("param", "").split(",") if "=" in p)
        for p in cfg["param"] or []:
            if "=" not in p:
                raise UsageError(f"--param expects key=value, got {p!r}")
            k, v = p.split("=", 1)
            params[k] = v
        cfg["param"] = {k: _parse_value(v) for k, v in sorted(params.items())}
    return cfg


def _parse_value(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def _config_strings(cfg: Dict[str, Any]) -> Dict[str, str]:
    # the output location is left out so reruns into another directory match byte for byte
    return {k: (json.dumps(v, sort_keys=True) if isinstance(v, (dict, list)) else str(v))
            for k, v in cfg.items() if k != "out"}


def _sidecar(path: Path, cfg: Dict[str, Any], lines: Sequence[str]) -> None:
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    with open(str(path) + ".log", "a", encoding="utf-8") as f:
        f.write(f"[{stamp}] config={json.dumps(_config_strings(cfg), sort_keys=True)}\n")
        for line in lines:
            f.write(f"[{stamp}] {line}\n")


def _spec(cfg: Dict[str, Any], fs: Optional[FeatureSet] = None) -> ClassifierSpec:
    name = cfg["classifier"]
    if name not in CLASSIFIERS and name != "_oracle":
        raise UsageError(f"unknown classifier {name!r}; choose from {', '.join(CLASSIFIERS)}")
    return ClassifierSpec(name, dict(cfg.get("param") or {}), not cfg["no_standardize"], cfg["seed"],
                          leaked=fs if name == "_oracle" else None)


# ---- extract -------------------------------------------------------------

_WORKER_MODEL = None


def _worker_init(weights_path):
    global _WORKER_MODEL
    _WORKER_MODEL = _load_model(weights_path)


def _load_model(weights_path):
    store = load_weights(weights_path)
    means = preprocess.parse_means(store.metadata.get("mean_rgb", ",".join(map(str, preprocess.DEFAULT_MEAN_RGB))))
    order = store.metadata.get("channel_order", "RGB")
    return resnet.build(store), means, order


def _extract_one(path):
    model, means, order = _WORKER_MODEL
    try:
        x = preprocess.load_image_tensor(path, means, order)
    except (OSError, FormatError, ShapeError) as e:
        return None, f"{path}: {e}"
    return resnet.extract(model, x)[0], None


def cmd_extract(cfg: Dict[str, Any]) -> int:
    manifest = Path(cfg["manifest"])
    entries = preprocess.parse_manifest(manifest.read_text(), base=manifest.parent)
    out = Path(cfg["out"])
    t0 = time.perf_counter()
    rows, labels, ids, skipped = [], [], [], []
    if entries:
        paths = [e.path for e in entries]
        if cfg["jobs"] > 1:
            with ProcessPoolExecutor(cfg["jobs"], initializer=_worker_init, initargs=(cfg["weights"],)) as ex:
                results = list(ex.map(_extract_one, paths, chunksize=4))
        else:
            _worker_init(cfg["weights"])
            results = []
            for i, p in enumerate(paths, start=1):
                results.append(_extract_one(p))
                if i % 50 == 0 or i == len(paths):
                    print(f"extract {i}/{len(paths)}", file=sys.stderr)
        for entry, (feat, err) in zip(entries, results):
            if err is not None:
                if cfg["strict"]:
                    raise FormatError(f"cannot read image {err}")
                log.warning("skipping %s", err)
                skipped.append(err)
                continue
            if not np.isfinite(feat).all():
                raise NumericalError(f"non-finite features for {entry.path}")
            rows.append(feat)
            labels.append(entry.label)
            ids.append(entry.id)
    else:
        load_weights(cfg["weights"])
    feats = np.stack(rows) if rows else np.zeros((0, resnet.FEATURE_DIM), np.float32)
    fs = FeatureSet(feats, np.array(labels, dtype=np.int64), ids)
    save_features(fs, out, _config_strings(cfg))
    _sidecar(out, cfg, [f"extracted {len(fs)} rows, skipped {len(skipped)} in {time.perf_counter() - t0:.1f}s"]
             + [f"skipped {s}" for s in skipped])
    print(f"wrote {len(fs)} feature rows to {out}", file=sys.stderr)
    return EXIT_OK


# ---- train / predict -----------------------------------------------------

def cmd_train(cfg: Dict[str, Any]) -> int:
    fs = load_features(cfg["features"])
    t0 = time.perf_counter()
    model = _spec(cfg, fs).fit(fs)
    store = model.to_store()
    store.metadata.update({f"config.{k}": v for k, v in _config_strings(cfg).items()})
    out = Path(cfg["out"])
    save_weights(store, out)
    _sidecar(out, cfg, [f"trained {cfg['classifier']} on {len(fs)} rows in {time.perf_counter() - t0:.2f}s"])
    return EXIT_OK


def cmd_predict(cfg: Dict[str, Any]) -> int:
    model = load_model(cfg["model"])
    fs = load_features(cfg["features"])
    labels, scores = model.predict(fs.features)
    out = Path(cfg["out"])
    header = "".join(f"# {k}={v}\n" for k, v in sorted(_config_strings(cfg).items()))
    names = {1: "cg", 0: "pg"}
    body = "".join(f"{i}\t{names[int(l)]}\t{float(s)!r}\n" for i, l, s in zip(fs.ids, labels, scores))
    out.write_text(header + "id\tlabel\tscore\n" + body, encoding="utf-8")
    _sidecar(out, cfg, [f"predicted {len(fs)} rows"])
    return EXIT_OK


# ---- evaluate / gridsearch -----------------------------------------------

def _grid(cfg: Dict[str, Any]) -> ev.GridSpec:
    spec = cfg.get("grid") or "log"
    kernel = "linear" if cfg["classifier"] == "svm-linear" else "rbf"
    if spec == "log":
        if cfg["classifier"] not in ("svm-linear", "svm-rbf"):
            raise UsageError("the log grid applies to svm-linear / svm-rbf; pass --grid axis=v1,v2;...")
        return ev.default_grid(kernel)
    axes = {}
    for part in spec.split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise UsageError(f"bad grid axis {part!r}; expected name=v1,v2,...")
        name, values = part.split("=", 1)
        axes[name.strip()] = [float(v) for v in values.split(",")]
    return ev.GridSpec.of(**axes)


def cmd_evaluate(cfg: Dict[str, Any]) -> int:
    fs = load_features(cfg["features"])
    plan = ev.make_folds(fs.labels, cfg["folds"], cfg["seed"])
    spec = _spec(cfg, fs)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if cfg.get("gridsearch"):
            report = ev.nested_cross_validate(fs, spec, _grid(cfg), plan, jobs=cfg["jobs"])
        else:
            report = ev.cross_validate(fs, spec, plan, jobs=cfg["jobs"])
    out = Path(cfg["out"])
    strs = _config_strings(cfg)
    ev.write_report(report, out, strs)
    if cfg.get("learning_curve"):
        fractions = [float(f) for f in cfg["learning_curve"].split(",")]
        rows = ev.learning_curve(fs, spec, fractions, plan)
        cols = ["fraction", "train_size", "train_mean", "train_std", "val_mean", "val_std"]
        ev.write_tsv(out / "learning_curve.tsv", cols, [[r[c] for c in cols] for r in rows], strs)
    _sidecar(out / "run", cfg, [f"fold {i} took {s:.3f}s" for i, s in enumerate(report.fold_seconds)]
             + [f"total {time.perf_counter() - t0:.2f}s"])
    print(f"mean accuracy {report.mean_accuracy:.4f} (std {report.std:.4f})", file=sys.stderr)
    return EXIT_OK


def cmd_gridsearch(cfg: Dict[str, Any]) -> int:
    fs = load_features(cfg["features"])
    plan = ev.make_folds(fs.labels, cfg["folds"], cfg["seed"])
    grid = _grid(cfg)
    t0 = time.perf_counter()
    result = ev.grid_search(fs, _spec(cfg, fs), grid, plan, jobs=cfg["jobs"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    strs = _config_strings(cfg)
    ev.write_grid(result, out / "grid.tsv", strs)
    ev.write_heatmap(result, out / "heatmap.tsv", strs)
    best = {"config": strs, "best_params": result.best_params, "best_score": result.best_score,
            "cells": len(result.table)}
    (out / "best.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    _sidecar(out / "run", cfg, [f"{len(result.table)} cells in {time.perf_counter() - t0:.2f}s"])
    print(f"best {result.best_params} -> {result.best_score:.4f}", file=sys.stderr)
    return EXIT_OK


# ---- tsne ----------------------------------------------------------------

def cmd_tsne(cfg: Dict[str, Any]) -> int:
    if cfg.get("features"):
        fs = load_features(cfg["features"])
        points, labels, ids = fs.features, fs.labels, fs.ids
    elif cfg.get("manifest"):
        manifest = Path(cfg["manifest"])
        entries = preprocess.parse_manifest(manifest.read_text(), base=manifest.parent)
        points = np.stack([preprocess.load_image_tensor(e.path).reshape(-1) for e in entries])
        labels = [e.label for e in entries]
        ids = [e.id for e in entries]
    else:
        raise UsageError("tsne needs --features or --manifest")
    tcfg = tsne.TsneConfig(perplexity=cfg["perplexity"], iterations=cfg["iterations"], seed=cfg["seed"])
    y = tsne.embed(points, tcfg)
    if not np.isfinite(y).all():
        raise NumericalError("t-SNE produced non-finite coordinates")
    out = Path(cfg["out"])
    header = "".join(f"# {k}={v}\n" for k, v in sorted(_config_strings(cfg).items()))
    tsne.write_embedding(out, ids, labels, y, header)
    _sidecar(out, cfg, [f"embedded {len(ids)} points"])
    return EXIT_OK


# ---- helpers -------------------------------------------------------------

def cmd_reference_weights(cfg: Dict[str, Any]) -> int:
    store = refweights.make_reference_store(cfg["seed"])
    save_weights(store, cfg["out"])
    print(f"wrote {len(store)} tensors to {cfg['out']}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(cfg: Dict[str, Any]) -> int:
    path = synth.write_dataset(cfg["out"], cfg["scenes"], cfg["seed"])
    print(f"wrote manifest {path}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cgdetect", description="CG vs PG image detection with ResNet-50 bottleneck features")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key=value file; flags override it")
        sp.add_argument("--seed", type=int, help="recorded in every output (default 0)")
        sp.add_argument("--out", required=True)

    def classifier_opts(sp):
        sp.add_argument("--features", required=True)
        sp.add_argument("--classifier", metavar="{" + ",".join(CLASSIFIERS) + "}")
        sp.add_argument("--param", action="append", metavar="KEY=VALUE", help="hyperparameter override")
        sp.add_argument("--no-standardize", action="store_true", default=None)
        sp.add_argument("--jobs", type=int)

    sp = sub.add_parser("extract", help="images -> bottleneck feature file")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--strict", action="store_true", default=None)
    sp.add_argument("--jobs", type=int)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("train", help="train one classifier on a feature file")
    common(sp)
    classifier_opts(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="k-fold cross-validation report")
    common(sp)
    classifier_opts(sp)
    sp.add_argument("--folds", type=int)
    sp.add_argument("--gridsearch", action="store_true", default=None,
                    help="select hyperparameters per outer fold by inner grid search")
    sp.add_argument("--grid", help="'log' (decades) or 'C=0.1,1;gamma=0.01,0.1'")
    sp.add_argument("--learning-curve", help="comma-separated training fractions")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("gridsearch", help="grid of mean CV accuracy + heatmap")
    common(sp)
    classifier_opts(sp)
    sp.add_argument("--folds", type=int)
    sp.add_argument("--grid")
    sp.set_defaults(func=cmd_gridsearch)

    sp = sub.add_parser("predict", help="per-image labels and scores")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("tsne", help="2-D embedding TSV")
    common(sp)
    sp.add_argument("--features")
    sp.add_argument("--manifest", help="embed raw preprocessed pixels instead of features")
    sp.add_argument("--perplexity", type=float)
    sp.add_argument("--iterations", type=int)
    sp.set_defaults(func=cmd_tsne)

    sp = sub.add_parser("reference-weights", help="write the deterministic reference weight container")
    common(sp)
    sp.set_defaults(func=cmd_reference_weights, command_defaults={"seed": refweights.DEFAULT_SEED})

    sp = sub.add_parser("synth", help="write a synthetic CG/PG scene dataset with manifest")
    common(sp)
    sp.add_argument("--scenes", type=int, help="scene count; each scene yields one CG and one PG image")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    del args.verbose
    try:
        cfg = resolve(args)
        return args.func(cfg)
    except UsageError as e:
        print(f"cgdetect: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as e:
        print(f"cgdetect: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as e:
        print(f"cgdetect: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ShapeError, KeyError, OSError, CGDetectError, ValueError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"cgdetect: data error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
