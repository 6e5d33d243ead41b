"""Command-line entry point: ``segmicro <command> [options]``."""

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import augment, dataio, experiment, gradcheck, synthetic, trainer
from .errors import ConfigError, DataError, SegmicroError, ShapeError, TrainingError
from .netgraph import FCN, ModelConfig, build_graph, param_count, predict

log = logging.getLogger("segmicro")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4

TINY_FCN = ModelConfig(arch=FCN, filters=(8, 16, 32, 16, 8))
TINY_UNET = ModelConfig(filters=(2, 4, 8, 16, 32))


def _load_config(args, required=True):
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command")
        return None
    return experiment.load(args.config, args.seed)


def _threads(args):
    n = args.threads
    if n is None and os.environ.get("SEGMICRO_THREADS"):
        n = int(os.environ["SEGMICRO_THREADS"])
    return n


def _publish(tmp: Path, final: Path) -> None:
    # outputs become visible only once complete
    if final.exists():
        shutil.rmtree(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    os.replace(tmp, final)


def _originals(cfg, args) -> dataio.Dataset:
    nc = cfg.data.get("num_classes", cfg.model.num_classes)
    if args.originals:
        root = Path(args.originals)
        return dataio.read_directory(root / "images", root / "masks", nc)
    syn = cfg.data.get("synthetic")
    if syn is None:
        raise ConfigError("gen-data needs --originals DIR or a data.synthetic section")
    return synthetic.blob_dataset(syn.get("train", 12), cfg.seed, syn.get("size", 64), syn.get("noise", 0.05))


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    originals = _originals(cfg, args)
    multiplier = cfg.data.get("multiplier", 1)
    generated = dataio.generate_dataset(originals, cfg.policy(), multiplier, cfg.seed)
    out = Path(args.out or "dataset")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".gen-", dir=out.parent))
    try:
        dataio.write_dataset(generated, tmp)
        _publish(tmp, out)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    print(f"{len(originals)} originals x {multiplier} -> {len(generated)} samples in {out / 'manifest.json'}")
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg = _load_config(args, required=False)
    policy = cfg.policy() if cfg else augment.AugmentPolicy.microscopy()
    if not (args.image and args.mask):
        raise ConfigError("augment needs --image and --mask")
    sample = dataio.read_sample(args.image, args.mask)
    image = sample.image[..., 0] if sample.image.shape[2] == 1 else sample.image
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    img, msk = augment.transform(image, sample.mask, policy, seed)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_sample(dataio.Sample(img, msk, sample.id), out / f"{sample.id}_aug.png", out / f"{sample.id}_aug_mask.png")
    print(f"wrote {out / (sample.id + '_aug.png')}")
    return EXIT_OK


def _datasets(cfg):
    syn = cfg.data.get("synthetic")
    manifest = cfg.path("train_manifest")
    if manifest is not None:
        full = dataio.read_manifest(manifest)
        test_path = cfg.path("test_manifest")
        test = dataio.read_manifest(test_path) if test_path else None
    elif syn is not None:
        size, noise = syn.get("size", 64), syn.get("noise", 0.05)
        full = synthetic.blob_dataset(syn.get("train", 24), cfg.seed, size, noise)
        test = synthetic.blob_dataset(syn.get("test", 4), cfg.seed + 1, size, noise)
    else:
        raise ConfigError("config needs data.train_manifest or data.synthetic")
    train_set, val_set = dataio.split_train_val(full, cfg.validation_fraction, cfg.seed)
    return train_set, val_set, test


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train_set, val_set, test_set = _datasets(cfg)
    graph = build_graph(cfg.model, cfg.seed)
    opt = cfg.make_optimizer()
    out_root = Path(args.out or "runs")
    out_root.mkdir(parents=True, exist_ok=True)
    final = out_root / cfg.digest()
    tmp = Path(tempfile.mkdtemp(prefix=".train-", dir=out_root))
    try:
        tconf = cfg.training
        tconf.checkpoint_path = str(tmp / "checkpoint.seg")
        log.info("training %s (%d params) on %d/%d samples", cfg.model.arch, param_count(graph),
                 len(train_set), len(val_set))
        history, _ = trainer.train(graph, opt, train_set, val_set, tconf)
        history.write_csv(tmp / "history.csv", wall_time=False)
        report = trainer.evaluate(graph, test_set if test_set is not None else val_set)
        (tmp / "metrics.json").write_text(report.to_json())
        (tmp / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
        _publish(tmp, final)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    print(f"stopped after {len(history.records)} epochs ({history.stop_reason}); best epoch {history.best_epoch}")
    print(report.to_json(), end="")
    print(f"artifacts in {final}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not (args.checkpoint and args.manifest):
        raise ConfigError("evaluate needs --checkpoint and --manifest")
    report = trainer.evaluate(args.checkpoint, dataio.read_manifest(args.manifest))
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    if not (args.checkpoint and args.image):
        raise ConfigError("predict needs --checkpoint and --image")
    graph = trainer.load_checkpoint(args.checkpoint)
    image = dataio.read_image(args.image)
    labels = predict(graph, image)
    out = Path(args.out or Path(args.image).with_suffix(".pred.png"))
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.write_mask(out, labels)
    counts = np.bincount(labels.ravel(), minlength=graph.config.num_classes)
    sidecar = {"image": str(args.image), "height": int(labels.shape[0]), "width": int(labels.shape[1]),
               "pixel_counts": {str(c): int(n) for c, n in enumerate(counts)}}
    Path(str(out) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = _load_config(args)
    print(param_count(build_graph(cfg.model, cfg.seed)))
    return EXIT_OK


def run_gradcheck(configs, tolerance: float = 1e-4, seed: int = 0, backward=None) -> dict:
    """Primitive and whole-graph gradient checks; returns a JSON-able report."""
    report = {"tolerance": tolerance, "primitives": gradcheck.check_primitives(seed), "graphs": {}}
    rng = np.random.default_rng(seed)
    for name, (config, size) in configs.items():
        graph = build_graph(config, seed)
        x = rng.random((1, size, size, config.num_channels))
        y = rng.integers(0, config.num_classes, (1, size, size))
        report["graphs"][name] = gradcheck.check_graph(graph, x, y, seed=seed, backward=backward)
    worst = [v for v in report["primitives"].values()]
    worst += [v for g in report["graphs"].values() for k, v in g.items() if not k.startswith("_")]
    report["max_relative_error"] = max(worst)
    report["passed"] = report["max_relative_error"] < tolerance
    return report


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args, required=False)
    if cfg is None:
        configs = {"tiny_fcn": (TINY_FCN, 8), "tiny_unet": (TINY_UNET, 16)}
    else:
        configs = {"config": (cfg.model, 16)}
    seed = args.seed if args.seed is not None else 0
    report = run_gradcheck(configs, args.tolerance, seed)
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_FAILED


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate an augmented dataset from originals"),
    "augment": (cmd_augment, "apply one seeded random transform to an image/mask pair"),
    "train": (cmd_train, "train a model and write history.csv, checkpoint and metrics.json"),
    "evaluate": (cmd_evaluate, "evaluate a checkpoint on a dataset manifest"),
    "predict": (cmd_predict, "write a paletted label-map PNG for one image"),
    "params": (cmd_params, "print the learnable parameter count of a config"),
    "gradcheck": (cmd_gradcheck, "compare backprop against finite differences"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--threads", type=int, help="BLAS threads (default: $SEGMICRO_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="segmicro", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "gen-data":
            p.add_argument("--originals", help="directory with images/ and masks/ subdirectories")
        if name == "augment":
            p.add_argument("--image")
            p.add_argument("--mask")
        if name in ("evaluate", "predict"):
            p.add_argument("--checkpoint")
        if name == "evaluate":
            p.add_argument("--manifest")
        if name == "predict":
            p.add_argument("--image")
        if name == "gradcheck":
            p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        threads = _threads(args)
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=threads):
                return func(args)
        return func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except SegmicroError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
