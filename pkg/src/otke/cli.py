"""Command-line interface: ``otke {synth,fit,embed,gram,check}``.

Exit codes: 0 success, 1 failed check, 2 usage, 3 I/O, 4 divergence,
5 shape mismatch, 6 size guard.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_model, save_model
from .checks import SUITES, run_suite
from .config import GRID_KEYS, PRESETS, ConfigError, load_config, preset_path
from .data import SynthSpec, generate_synthetic, load_jsonl, load_sequences, write_jsonl
from .exact import GRAM_KINDS, gram, write_gram_csv
from .exceptions import DimensionMismatch, NonFiniteError, OTKEError, ParseError, TooLarge
from .kernels import KernelSpec
from .references import fit_refs_kmeans
from .training import (
    TrainConfig,
    evaluate,
    select_supervised,
    select_unsupervised,
    train_supervised,
    train_unsupervised,
)

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED, EXIT_SHAPE, EXIT_SIZE = range(7)

log = logging.getLogger("otke")


class UsageError(Exception):
    """Bad flag combination detected after parsing."""


def _positive(cast):
    def parse(text):
        try:
            value = cast(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {cast.__name__} value: {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    parse.__name__ = cast.__name__
    return parse


def _nonnegative(cast):
    def parse(text):
        try:
            value = cast(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {cast.__name__} value: {text!r}") from None
        if value < 0:
            raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
        return value

    parse.__name__ = cast.__name__
    return parse


pos_int, pos_float = _positive(int), _positive(float)
nonneg_int, nonneg_float = _nonnegative(int), _nonnegative(float)


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _emit(prefix, **fields):
    parts = [prefix] if prefix else []
    parts += [f"{k}={_fmt(v)}" for k, v in fields.items()]
    print(" ".join(parts), flush=True)


def _threads(args):
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("OTKE_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"OTKE_THREADS must be a positive integer, got {env!r}") from None
        if value < 1:
            raise UsageError(f"OTKE_THREADS must be a positive integer, got {env!r}")
        return value
    return 1


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _check_writable(path):
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")


# ---------------------------------------------------------------- synth


def _synth_spec(args):
    return SynthSpec(
        classes=args.classes,
        motifs_per_class=args.motifs_per_class,
        motif_dim=args.motif_dim,
        motif_count_range=tuple(args.motif_count_range),
        set_length_range=tuple(args.set_length_range),
        background_std=args.background_std,
        motif_std=args.motif_std,
        motif_radius=args.motif_radius,
        seed=args.seed,
    )


def cmd_synth(args):
    try:
        spec = _synth_spec(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = generate_synthetic(spec, args.m_train, args.m_val, args.m_test)
    for ds in splits:
        write_jsonl(ds, out / f"{ds.split}.jsonl")
    _emit("synth", m=sum(len(ds) for ds in splits), C=spec.classes, seed=spec.seed)
    return EXIT_OK


# ---------------------------------------------------------------- fit

# flags that override config values; dest names match config keys
FIT_FLAGS = {
    "epochs": nonneg_int, "batch_size": pos_int, "lr": pos_float,
    "lr_halving_patience": nonneg_int, "lambda": nonneg_float, "epsilon": pos_float,
    "sinkhorn_iters": pos_int, "sup_sinkhorn_iters": pos_int, "sigma_pos": pos_float,
    "p": pos_int, "q": pos_int, "k": pos_int, "sigma": pos_float, "ridge": nonneg_float,
    "max_fit_features": pos_int, "phase_epochs": pos_int, "seed": nonneg_int,
    "kmer_size": pos_int,
}
FIT_CHOICES = {
    "kernel": ("gaussian", "linear"), "anchor_method": ("kmeans", "random"),
    "ref_method": ("kmeans", "wasserstein"), "pooling": ("ot", "dot_product"),
    "schedule": ("alternating", "joint"),
}


def _resolve_fit_settings(args):
    settings = {}
    if args.preset:
        settings.update(load_config(preset_path(args.preset)))
    if args.config:
        settings.update(load_config(args.config))
    for key in list(FIT_FLAGS) + list(FIT_CHOICES) + ["train", "val", "test", "alphabet"]:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if args.no_pe:
        settings["sigma_pos"] = None
    return settings


def _train_config(settings):
    names = set(TrainConfig.field_names())
    values = {("lam" if k == "lambda" else k): v for k, v in settings.items()}
    values = {k: v for k, v in values.items() if k in names}
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_dataset(path, settings, split, num_classes=None):
    if path is None:
        return None
    if settings.get("alphabet"):
        return load_sequences(path, settings["alphabet"], settings.get("kmer_size", 10),
                              num_classes=num_classes, split=split)
    return load_jsonl(path, num_classes=num_classes, split=split)


def _grids(settings):
    return {field: settings[key] for key, field in GRID_KEYS.items()
            if key in settings and field != "lr"}


def cmd_fit(args):
    settings = _resolve_fit_settings(args)
    if "train" not in settings:
        raise UsageError("--train is required (flag or config key 'train')")
    if args.mode == "sup" and args.init is None:
        raise UsageError("--mode sup requires --init <checkpoint>")
    for key in ("train", "val", "test", "alphabet"):
        if settings.get(key) and not Path(settings[key]).is_file():
            raise FileNotFoundError(f"{key} file not found: {settings[key]}")
    if args.init and not Path(args.init).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.init}")
    _check_writable(args.out)
    if args.metrics:
        _check_writable(args.metrics)
    config = _train_config(settings)
    train = _load_dataset(settings["train"], settings, "train")
    C = train.num_classes
    val = _load_dataset(settings.get("val"), settings, "val", C)
    test = _load_dataset(settings.get("test"), settings, "test", C)
    grids = _grids(settings)
    lr_grid = settings.get("lr_grid")
    needs_val = (grids and any(len(v) > 1 for v in grids.values())) or (lr_grid and len(lr_grid) > 1)
    if needs_val and not args.no_grid and val is None:
        raise UsageError("grid search needs a validation set (--val)")
    if args.no_grid:
        grids, lr_grid = {}, None

    metrics = {"mode": args.mode, "config": config.to_dict()}
    if args.mode == "unsup":
        if grids:
            model, config, trials = select_unsupervised(train, val, config, grids)
            metrics["config"] = config.to_dict()
            metrics["grid"] = trials
        else:
            model, info = train_unsupervised(train, config)
    else:
        init = load_model(args.init)
        if init.nystrom.n_features != train.d:
            raise DimensionMismatch(
                f"checkpoint expects {init.nystrom.n_features} features, data has {train.d}")

        def report(record):
            _emit("", epoch=record["epoch"], train_loss=record["train_loss"],
                  val_acc=record.get("val_acc", float("nan")), lr=record["lr"])

        if lr_grid:
            model, config, info = select_supervised(train, val, config, init, lr_grid, report)
            metrics["grid"] = info["grid"]
        else:
            model, info = train_supervised(train, config, init, val, callback=report)
        metrics["history"] = info["history"]
        metrics["best_epoch"] = info["best_epoch"]
        metrics["config"] = config.to_dict()
    for name, ds in (("train", train), ("val", val), ("test", test)):
        if ds is not None and len(ds):
            metrics[name] = evaluate(model, ds)
    save_model(args.out, model)
    if args.metrics:
        _write_json(args.metrics, metrics)
    summary = {}
    for name in ("train", "val", "test"):
        if name in metrics:
            key = "top1" if "top1" in metrics[name] else "auroc"
            summary[f"{name}_{'acc' if key == 'top1' else 'auroc'}"] = metrics[name][key]
    _emit("fit", mode=args.mode, **summary, checkpoint=args.out)
    return EXIT_OK


# ---------------------------------------------------------------- embed


def cmd_embed(args):
    for path in (args.model, args.data):
        if not Path(path).is_file():
            raise FileNotFoundError(f"file not found: {path}")
    _check_writable(args.out)
    model = load_model(args.model)
    settings = {"alphabet": args.alphabet, "kmer_size": args.kmer_size}
    data = _load_dataset(args.data, settings, None)
    if data.d != model.nystrom.n_features:
        raise DimensionMismatch(
            f"checkpoint expects {model.nystrom.n_features} features, data has {data.d}")
    E = model.embed(data.sets)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for row in E:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")
    _emit("embed", m=E.shape[0], dim=E.shape[1], out=args.out)
    return EXIT_OK


# ---------------------------------------------------------------- gram


def cmd_gram(args):
    if not Path(args.data).is_file():
        raise FileNotFoundError(f"file not found: {args.data}")
    _check_writable(args.out)
    data = load_jsonl(args.data)
    spec = KernelSpec(args.kernel, args.sigma)
    bank = None
    if args.kind == "k_z":
        pool = np.concatenate(data.sets, axis=0)
        bank = fit_refs_kmeans(pool, args.p, 1, seed=args.seed, epsilon=args.epsilon,
                               n_iter=args.sinkhorn_iters)
    result = gram(data.sets, args.kind, spec, epsilon=args.epsilon, bank=bank,
                  n_iter=args.sinkhorn_iters, threads=_threads(args))
    write_gram_csv(args.out, result)
    min_eig = float(np.linalg.eigvalsh(result.values).min())
    _emit("gram", kind=args.kind, m=len(data), solves=result.n_solves, min_eig=min_eig,
          out=args.out)
    return EXIT_OK


# ---------------------------------------------------------------- check


def cmd_check(args):
    names = list(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        result = run_suite(name, trials=args.trials, seed=args.seed)
        print(result.line(), flush=True)
        ok &= result.passed
    _emit("check", status="PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(prog="otke", description="Optimal transport kernel embedding")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic motif dataset")
    p.add_argument("--out", required=True, help="output directory for train/val/test JSONL")
    p.add_argument("--classes", type=pos_int, default=5)
    p.add_argument("--motifs-per-class", type=pos_int, default=3)
    p.add_argument("--motif-dim", type=pos_int, default=16)
    p.add_argument("--motif-count-range", type=pos_int, nargs=2, default=(2, 5), metavar=("MIN", "MAX"))
    p.add_argument("--set-length-range", type=pos_int, nargs=2, default=(20, 100), metavar=("MIN", "MAX"))
    p.add_argument("--background-std", type=nonneg_float, default=1.0)
    p.add_argument("--motif-std", type=nonneg_float, default=0.1)
    p.add_argument("--motif-radius", type=pos_float, default=5.0)
    p.add_argument("--m-train", type=nonneg_int, default=1000)
    p.add_argument("--m-val", type=nonneg_int, default=200)
    p.add_argument("--m-test", type=nonneg_int, default=500)
    p.add_argument("--seed", type=nonneg_int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="train a model and write a checkpoint")
    p.add_argument("--mode", choices=("unsup", "sup"), default="unsup")
    p.add_argument("--train", help="training data (JSONL, or sequences with --alphabet)")
    p.add_argument("--val")
    p.add_argument("--test")
    p.add_argument("--alphabet", help="alphabet file; switches data loading to sequences")
    p.add_argument("--init", help="unsupervised checkpoint to start supervised training from")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="metrics JSON path")
    p.add_argument("--config", help="INI file with key = value settings")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--no-pe", action="store_true", help="disable positional weighting")
    p.add_argument("--no-grid", action="store_true", help="ignore *_grid keys from the config")
    for key, cast in FIT_FLAGS.items():
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=cast)
    for key, choices in FIT_CHOICES.items():
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, choices=choices)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("embed", help="write one embedding per input set (CSV)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alphabet")
    p.add_argument("--kmer-size", type=pos_int, default=10)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("gram", help="exact pairwise kernel matrix (CSV)")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=GRAM_KINDS, default="k_z")
    p.add_argument("--out", required=True)
    p.add_argument("--kernel", choices=("gaussian", "linear"), default="gaussian")
    p.add_argument("--sigma", type=pos_float, default=1.0)
    p.add_argument("--epsilon", type=pos_float, default=0.5)
    p.add_argument("--p", type=pos_int, default=10, help="supports of the K-means reference (k_z)")
    p.add_argument("--sinkhorn-iters", type=pos_int, default=500)
    p.add_argument("--seed", type=nonneg_int, default=0)
    p.add_argument("--threads", type=pos_int)
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("check", help="run self-check suites")
    p.add_argument("--suite", choices=("all",) + tuple(SUITES), default="all")
    p.add_argument("--trials", type=pos_int)
    p.add_argument("--seed", type=nonneg_int)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"otke: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        last = getattr(exc, "last_finite_epoch", None)
        print(f"otke: diverged: {exc}" + (f" (last finite epoch {last})" if last is not None else ""),
              file=sys.stderr)
        return EXIT_DIVERGED
    except TooLarge as exc:
        print(f"otke: too large: {exc}", file=sys.stderr)
        return EXIT_SIZE
    except DimensionMismatch as exc:
        print(f"otke: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (OSError, ParseError) as exc:
        print(f"otke: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OTKEError as exc:
        print(f"otke: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
