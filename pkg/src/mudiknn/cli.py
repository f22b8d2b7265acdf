"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .annotations import dataset_stats, load_annotations
from .errors import DataError, NumericalError
from .labelmaps import (KINDS, RESOLUTIONS, MapConfig, downsample_map, export_png, load_lmap, make_map,
                        parse_sigma_mode, pool_mode_for, save_lmap)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _sigma_mode(text):
    try:
        return parse_sigma_mode(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text):
    return [int(v) for v in text.split(",")]


# one table drives both parsing and --help
FLAGS = {
    "--kind": dict(choices=KINDS, default="iknn", help="label kind"),
    "--k": dict(type=int, default=1, help="neighbour count for knn/iknn maps"),
    "--beta": dict(type=float, default=0.3, help="Gaussian scale factor for density maps"),
    "--sigma-mode": dict(type=_sigma_mode, default="adaptive:3", help="adaptive:K or fixed:S"),
    "--resolution": dict(type=int, choices=RESOLUTIONS, default=224, help="label resolution"),
    "--seed": dict(type=int, default=0, help="random seed"),
    "--epochs": dict(type=int, default=10, help="training epochs"),
    "--batch": dict(type=int, default=8, help="batch size"),
    "--lr": dict(type=float, default=1e-3, help="learning rate"),
    "--step": dict(type=int, default=128, help="sliding-window step"),
    "--patch": dict(type=int, default=224, help="patch size"),
    "--threads": dict(type=int, default=1, help="worker threads for spatial queries"),
    "--out": dict(required=True, help="output path"),
    "--image": dict(help="image file (used for its width and height)"),
    "--heads": dict(help="head annotation CSV"),
    "--width": dict(type=int, help="image width when no --image is given"),
    "--height": dict(type=int, help="image height when no --image is given"),
    "--map": dict(required=True, help="LMAP raster to visualise"),
    "--scale": dict(choices=("linear", "log"), default="linear", help="intensity scaling"),
    "--data": dict(required=True, help="directory of PNG + CSV pairs"),
    "--test-data": dict(help="evaluation directory (default: last quarter of --data)"),
    "--checkpoint": dict(required=True, help="checkpoint directory written by train"),
    "--axis": dict(choices=("k", "beta", "resolution"), required=True, help="ablation axis"),
    "--values": dict(required=True, help="comma-separated sweep values"),
    "--n": dict(type=int, default=1, help="number of scenes"),
    "--count-range": dict(type=_int_list, default=[5, 50], help="lo,hi head count per scene"),
    "--noise": dict(type=float, default=0.05, help="pixel noise amplitude"),
}

LABEL_FLAGS = ["--kind", "--k", "--beta", "--sigma-mode", "--resolution"]
TRAIN_FLAGS = ["--seed", "--epochs", "--batch", "--lr", "--patch", "--threads"]

COMMANDS = {
    "gen-map": ("generate a label map raster",
                ["--kind", "--k", "--beta", "--sigma-mode", "--resolution", "--image", "--heads",
                 "--width", "--height", "--threads", "--out"]),
    "viz": ("export an LMAP raster as PNG", ["--map", "--scale", "--out"]),
    "stats": ("dataset statistics", ["--data"]),
    "synth": ("generate a synthetic dataset",
              ["--n", "--seed", "--width", "--height", "--count-range", "--noise", "--out"]),
    "train": ("train a model", ["--data", *LABEL_FLAGS, *TRAIN_FLAGS, "--out"]),
    "eval": ("evaluate a checkpoint with sliding windows",
             ["--checkpoint", "--data", "--step", "--patch", "--out"]),
    "sweep": ("labeling ablation sweep",
              ["--axis", "--values", "--data", "--test-data", *LABEL_FLAGS, *TRAIN_FLAGS, "--step", "--out"]),
    "grad-check": ("finite-difference gradient checks", ["--seed"]),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="mudiknn", description="ikNN crowd-count labels and multi-scale counting network")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (help_text, flags) in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text, description=help_text)
        for flag in flags:
            cmd.add_argument(flag, **FLAGS[flag])
    return parser


def _map_config(args):
    return MapConfig(k=args.k, beta=args.beta, sigma_mode=args.sigma_mode, label_resolution=args.resolution)


def _train_config(args):
    from .train import TrainConfig

    return TrainConfig(label_kind=args.kind, maps=_map_config(args), epochs=args.epochs, batch_size=args.batch,
                       lr=args.lr, seed=args.seed, patch=args.patch)


def cmd_gen_map(args):
    from .synthetic import image_size

    if args.heads is None:
        raise UsageError("gen-map: --heads is required")
    if args.image is not None:
        try:
            width, height = image_size(args.image)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read image {args.image}: {exc}") from exc
    elif args.width and args.height:
        width, height = args.width, args.height
    else:
        raise UsageError("gen-map: give --image or both --width and --height")
    annotations = load_annotations(args.heads, width, height)
    label = make_map(args.kind, annotations, _map_config(args), workers=args.threads)
    if args.resolution != label.width or args.resolution != label.height:
        if label.width % args.resolution == 0 and label.height % args.resolution == 0 and label.width == label.height:
            label = downsample_map(label, args.resolution, pool_mode_for(args.kind) + "_pool")
    save_lmap(args.out, label)


def cmd_viz(args):
    export_png(load_lmap(args.map), args.out, scale=args.scale)


def cmd_stats(args):
    from .synthetic import image_size

    data = Path(args.data)
    if not data.is_dir():
        raise DataError(f"dataset directory not found: {data}")
    sets = []
    for png in sorted(data.glob("*.png")):
        width, height = image_size(png)
        sets.append(load_annotations(png.with_suffix(".csv"), width, height))
    if not sets:
        raise DataError(f"no images found in {data}")
    stats = dataset_stats(sets)
    print(f"images={stats.images}")
    print(f"total_count={stats.total_count}")
    print(f"mean_count={stats.mean_count:.6g}")
    print(f"max_count={stats.max_count}")
    print(f"average_resolution={stats.average_resolution[0]:.6g}x{stats.average_resolution[1]:.6g}")


def cmd_synth(args):
    from .synthetic import SceneConfig, generate_dataset

    if len(args.count_range) != 2:
        raise UsageError("synth: --count-range takes lo,hi")
    try:
        config = SceneConfig(seed=args.seed, width=args.width or 224, height=args.height or 224,
                             count_lo=args.count_range[0], count_hi=args.count_range[1], noise=args.noise)
    except ValueError as exc:
        raise UsageError(f"synth: {exc}") from None
    generate_dataset(config, args.n, args.out)


def _epoch_printer(record):
    print(f"epoch {record.epoch} L={record.total:.6g} L_m={record.map_loss:.6g} L_c={record.count_loss:.6g}",
          file=sys.stderr)


def cmd_train(args):
    from .synthetic import load_dataset
    from .train import train

    result = train(load_dataset(args.data), _train_config(args), callback=_epoch_printer, workers=args.threads)
    result.save(args.out)


def cmd_eval(args):
    from .evaluate import evaluate, write_metrics_csv
    from .model import MudNet
    from .synthetic import load_dataset

    try:
        model, config = MudNet.load(args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    report = evaluate(model, load_dataset(args.data), patch=args.patch, step=args.step)
    method = config.get("label_kind", "model")
    if method == "iknn":
        method = f"MUD-i{config.get('k', '?')}NN"
    elif method == "density":
        method = f"MUD-density-beta{float(config.get('beta', 'nan')):g}"
    write_metrics_csv(args.out, [(method, report)])


def cmd_sweep(args):
    from .evaluate import ablation_sweep, write_metrics_csv
    from .synthetic import load_dataset

    train_samples = load_dataset(args.data)
    if args.test_data:
        test_samples = load_dataset(args.test_data)
    else:
        cut = max(1, len(train_samples) * 3 // 4)
        if cut >= len(train_samples):
            raise DataError("sweep needs --test-data or at least two images in --data")
        train_samples, test_samples = train_samples[:cut], train_samples[cut:]
    caster = int if args.axis in ("k", "resolution") else float
    try:
        values = [caster(v) for v in args.values.split(",")]
        base = _train_config(args)
        for v in values:
            base.with_axis(args.axis, v)
    except ValueError as exc:
        raise UsageError(f"sweep: bad --values: {exc}") from None

    def progress(method, report):
        print(f"{method}: mae={report.mae:.4g} nae={report.nae:.4g} rmse={report.rmse:.4g}", file=sys.stderr)

    rows = ablation_sweep(train_samples, test_samples, args.axis, values, base, patch_step=args.step,
                          workers=args.threads, progress=progress)
    write_metrics_csv(args.out, rows)


def cmd_grad_check(args):
    from .checks import map_module_check, operator_checks

    results = operator_checks(seed=args.seed)
    results["map_module"] = map_module_check(seed=args.seed)
    worst = 0.0
    for name, err in results.items():
        print(f"{name} {err:.3e}")
        worst = max(worst, err)
    if worst >= 1e-4:
        raise NumericalError(f"gradient check failed: max relative error {worst:.3e}")


HANDLERS = {
    "gen-map": cmd_gen_map,
    "viz": cmd_viz,
    "stats": cmd_stats,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "grad-check": cmd_grad_check,
}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        if hasattr(args, "sigma_mode") and isinstance(args.sigma_mode, str):
            args.sigma_mode = parse_sigma_mode(args.sigma_mode)
        HANDLERS[args.command](args)
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())
