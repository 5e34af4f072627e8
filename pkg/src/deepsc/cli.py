"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import LinearOvaSVM, evaluate, export_sparse_text, select_C
from .config import ConfigError, load_config
from .datasets import list_images, load_image, make_oriented_textures, split_per_class, write_dataset
from .descriptors import DenseSIFT, save_descriptors
from .exceptions import (
    DeepSCError,
    FormatError,
    InvalidInputError,
    ModelError,
    NumericalError,
)
from .pipeline import extract_many, load_model, save_model, train_model

logger = logging.getLogger("deepsc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _load_all(paths):
    return [load_image(p) for p in paths]


def _dataset(cfg):
    if cfg.data_root is None:
        raise ConfigError("[data] root is required")
    return list_images(cfg.data_root)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_synth(out, n_per_class=100, size=64, seed=0):
    images, labels = make_oriented_textures(n_per_class, size, seed)
    write_dataset(out, images, labels, ["class0_vertical_stripes", "class1_horizontal_stripes"])
    print(f"wrote {len(images)} images to {out}")
    return EXIT_OK


def cmd_descriptors(images_dir, out, patch_size=16, spacing=4):
    paths, _, _ = list_images(images_dir)
    root = Path(images_dir)
    grids = DenseSIFT(patch_size, spacing).fit().transform(_load_all(paths))
    save_descriptors(out, [(p.relative_to(root).as_posix(), g) for p, g in zip(paths, grids)])
    print(f"wrote {len(grids)} descriptor blocks to {out}")
    return EXIT_OK


def _train_split(cfg, split_seed, n_jobs):
    paths, labels, names = _dataset(cfg)
    train_idx, test_idx = split_per_class(labels, cfg.train_per_class, cfg.test_per_class, split_seed)
    train_images = _load_all([paths[i] for i in train_idx])
    # labels are deliberately not passed: training is unsupervised
    model = train_model(train_images, cfg.layers, patch_size=cfg.patch_size, spacing=cfg.spacing,
                        max_dict_samples=cfg.max_dict_samples, seed=cfg.seed, n_jobs=n_jobs)
    return model, paths, labels, names, train_idx, test_idx, train_images


def cmd_train(config, seed=None, n_jobs=1, out_dir=None):
    cfg = load_config(config)
    if seed is not None:
        cfg.seed = seed
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    model, *_ = _train_split(cfg, cfg.seed, n_jobs)
    save_model(model, out / "model.zip")
    _write_json(out / "train_log.json", model.training_log)
    print(f"model with {len(model.layers)} layer(s), K={model.dict_sizes}, written to {out / 'model.zip'}")
    return EXIT_OK


def cmd_features(model_path, images_dir, out, n_layers=None, n_jobs=1):
    model = load_model(model_path)
    if n_layers is not None and not 1 <= n_layers <= len(model.layers):
        raise ConfigError(f"--layers must be in [1, {len(model.layers)}]")
    paths, labels, _ = list_images(images_dir)
    feats = extract_many(model, _load_all(paths), n_layers, n_jobs)
    export_sparse_text(feats, labels.tolist(), out)
    print(f"wrote {feats.shape[0]} feature vectors of dim {feats.shape[1]} to {out}")
    return EXIT_OK


def _evaluate_once(cfg, split_seed, n_layers, n_jobs):
    model, paths, labels, names, tr, te, train_images = _train_split(cfg, split_seed, n_jobs)
    depths = range(1, len(model.layers) + 1) if n_layers == "all" else [n_layers]
    test_images = _load_all([paths[i] for i in te])
    results = {}
    for depth in depths:
        Ftr = extract_many(model, train_images, depth, n_jobs)
        Fte = extract_many(model, test_images, depth, n_jobs)
        C = cfg.svm_C
        if cfg.C_grid:
            C, _ = select_C(Ftr, labels[tr], cfg.C_grid, seed=split_seed, n_epochs=cfg.svm_epochs)
        svm = LinearOvaSVM(C=C, n_epochs=cfg.svm_epochs, random_state=split_seed).fit(Ftr, labels[tr])
        results[depth] = (evaluate(svm, Fte, labels[te]), C)
    return results, names


def aggregate(values):
    """Mean and population standard deviation (zero for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def cmd_evaluate(config, repeats=1, seed=None, n_layers=None, n_jobs=1, out_dir=None):
    cfg = load_config(config)
    if repeats < 1:
        raise ConfigError("--repeats must be >= 1")
    if seed is not None:
        cfg.seed = seed
    depth_key = "all" if n_layers == "all" else (n_layers or len(cfg.layers))
    if depth_key != "all" and not 1 <= depth_key <= len(cfg.layers):
        raise ConfigError(f"--layers must be in [1, {len(cfg.layers)}]")
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)

    runs = []
    for r in range(repeats):
        results, names = _evaluate_once(cfg, cfg.seed + r, depth_key, n_jobs)
        runs.append(results)
        for depth, (rep, C) in results.items():
            print(f"repeat {r + 1}/{repeats}  DeepSC-{depth}  C={C:g}  "
                  f"average per-class accuracy {rep.average_accuracy:.4f}")

    summary = {"repeats": repeats, "seed": cfg.seed, "class_names": names, "depths": {}}
    lines = []
    for depth in runs[0]:
        accs = [run[depth][0].average_accuracy for run in runs]
        mean, std = aggregate(accs)
        last = runs[-1][depth][0]
        summary["depths"][str(depth)] = {
            "mean": mean, "std": std, "per_repeat": accs,
            "per_class_last": dict(zip(names, last.per_class_accuracy.tolist())),
        }
        lines.append(f"DeepSC-{depth}: {100 * mean:.2f} +- {100 * std:.2f} (% over {repeats} repeat(s))")
        lines.append(last.format())
    text = "\n".join(lines)
    print(text)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    _write_json(out / "report.json", summary)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="deepsc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic two-class texture dataset")
    s.add_argument("out")
    s.add_argument("--n-per-class", type=int, default=100)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("descriptors", help="compute dense descriptors for a folder of images")
    s.add_argument("images_dir")
    s.add_argument("out")
    s.add_argument("--patch", type=int, default=16)
    s.add_argument("--spacing", type=int, default=4)

    s = sub.add_parser("train", help="train a model on the training split of a config")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help="output directory (default: [output] dir)")

    s = sub.add_parser("features", help="extract features and write them as sparse text")
    s.add_argument("--model", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--layers", type=int, help="use only the first N layers")
    s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("evaluate", help="split, train, extract, classify and report")
    s.add_argument("--config", required=True)
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--layers", help="depth to evaluate: an integer or 'all'")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help="output directory (default: [output] dir)")
    return p


def _parse_layers(value):
    if value is None or value == "all":
        return value
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"--layers must be an integer or 'all', got {value!r}") from None


def run(args):
    if args.command == "synth":
        return cmd_synth(args.out, args.n_per_class, args.size, args.seed)
    if args.command == "descriptors":
        return cmd_descriptors(args.images_dir, args.out, args.patch, args.spacing)
    if args.command == "train":
        return cmd_train(args.config, args.seed, args.jobs, args.out)
    if args.command == "features":
        return cmd_features(args.model, args.images, args.out, args.layers, args.jobs)
    if args.command == "evaluate":
        return cmd_evaluate(args.config, args.repeats, args.seed, _parse_layers(args.layers),
                            args.jobs, args.out)
    raise AssertionError(args.command)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ModelError, InvalidInputError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DeepSCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
