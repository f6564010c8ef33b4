"""Command-line interface.

Subcommands: generate, train, eval, ablate, gradcheck, export-attention,
probe. Exit codes: 0 success, 1 usage error, 2 numerical failure (non-finite
loss or failed gradient check), 3 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ablation import AXES, ablate
from .checkpoint import CheckpointError
from .dataio import DatasetError, Episode, read_dataset
from .gradcheck import finite_difference_check
from .model import ActorTensor, ModelConfig, build_model_params, embed_features, forward_model
from .synthetic import DEFAULT_NOISE, default_scripts, generate_dataset, oracle_probe
from .train import (
    NumericalFailure,
    RunConfig,
    evaluate,
    full_loss,
    load_model,
    train,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit((EXIT_USAGE, f"error: {message}"))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--data-ratio", type=float, default=None,
                   help="stratified fraction of the training split to use")
    p.add_argument("--variant", choices=("ss", "tt", "st", "ts", "dual"), default=None)
    p.add_argument("--scene-fusion", choices=("none", "early", "middle", "late"), default=None)
    p.add_argument("--out", type=str, default=None, help="output directory")


def _build_parser() -> _Parser:
    parser = _Parser(prog="dualpath", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic benchmark dataset")
    p.add_argument("--out", type=str, default="data", help="directory for train/test files")
    p.add_argument("--episodes-per-class", type=int, default=200)
    p.add_argument("--noise", type=float, default=DEFAULT_NOISE)
    p.add_argument("--train-fraction", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probe", action="store_true", help="run the separability probe afterwards")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", type=str, default=None, help="JSON run config")
    p.add_argument("--train-data", type=str, default=None)
    p.add_argument("--test-data", type=str, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--paper-schedule", action="store_true",
                   help="use the long reference schedule (140 epochs, decay at 60/100, lr 1e-4)")
    p.add_argument("--no-plots", action="store_true")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", type=str, required=True)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("ablate", help="train an ablation grid")
    p.add_argument("--axes", type=str, default="variant",
                   help=f"comma-separated subset of {AXES}")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--train-data", type=str, default=None)
    p.add_argument("--test-data", type=str, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--no-plots", action="store_true")
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--actors", type=int, default=4)
    p.add_argument("--model-dim", type=int, default=16)
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--actions", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export-attention", help="dump attention weights for one episode")
    p.add_argument("--config", type=str, required=True)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--episode-index", type=int, default=0)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("probe", help="nearest-template separability report for a dataset")
    p.add_argument("--data", type=str, required=True)
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    model = cfg.model
    if getattr(args, "variant", None):
        model = replace(model, variant=args.variant)
    if getattr(args, "scene_fusion", None):
        model = replace(model, scene_fusion=args.scene_fusion)
    updates = {"model": model}
    for attr, key in (("seed", "seed"), ("data_ratio", "data_ratio"), ("out", "out_dir"),
                      ("train_data", "train_path"), ("test_data", "test_path"),
                      ("epochs", "epochs"), ("lr", "lr"), ("batch_size", "batch_size")):
        val = getattr(args, attr, None)
        if val is not None:
            updates[key] = val
    if getattr(args, "paper_schedule", False):
        updates.update(lr=1e-4, epochs=140, decay_epochs=(60, 100))
    if "epochs" in updates:
        horizon = updates["epochs"]
        base_decays = updates.get("decay_epochs", cfg.decay_epochs)
        updates["decay_epochs"] = tuple(e for e in base_decays if e < horizon)
    return replace(cfg, **updates)


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    return _apply_overrides(cfg, args)


def _cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scripts = default_scripts()
    train_path, test_path = out / "train.gard", out / "test.gard"
    generate_dataset(scripts, args.episodes_per_class, train_path, test_path,
                     seed=args.seed, noise=args.noise, train_fraction=args.train_fraction)
    print(f"wrote {train_path} and {test_path}")
    if args.probe:
        _, episodes = read_dataset(test_path)
        report = oracle_probe(episodes, scripts)
        print(report.format_table())
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if not cfg.train_path or not cfg.test_path:
        raise SystemExit((EXIT_USAGE, "error: train/test dataset paths are required "
                                      "(--train-data/--test-data or config file)"))
    result = train(cfg)
    print(f"final test accuracy {result.final_test.group_accuracy:.4f} "
          f"(mpca {result.final_test.mpca:.4f})")
    if not args.no_plots:
        from .plots import plot_training_curves
        fig = plot_training_curves(result.metrics_path, Path(cfg.out_dir) / "training_curves.png")
        print(f"wrote {fig}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg, params = load_model(args.config, args.checkpoint)
    _, episodes = read_dataset(args.data)
    record, confusion = evaluate(params, cfg, episodes)
    print(record.to_json())
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(record.to_json() + "\n")
        np.savetxt(out / "confusion_matrix.csv", confusion, fmt="%d", delimiter=",")
        if not args.no_plots:
            from .plots import plot_confusion_matrix
            plot_confusion_matrix(confusion, out / "confusion_matrix.png")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    if not cfg.train_path or not cfg.test_path:
        raise SystemExit((EXIT_USAGE, "error: train/test dataset paths are required"))
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    for axis in axes:
        if axis not in AXES:
            raise SystemExit((EXIT_USAGE, f"error: unknown axis {axis!r}; valid: {AXES}"))
    out = Path(args.out or cfg.out_dir)
    result = ablate(cfg, axes, out)
    if not args.no_plots:
        from .plots import plot_per_class_bars
        for axis in axes:
            cells = [{"cell": c.label, "per_class_accuracy": c.per_class}
                     for c in result.cells if c.axis == axis]
            plot_per_class_bars(cells, out / f"per_class_{axis}.png")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    if args.frames * args.actors * args.model_dim > 4096:
        raise SystemExit((EXIT_USAGE, "error: gradcheck is restricted to small models "
                                      "(frames*actors*model_dim <= 4096)"))
    from .train import gradcheck_objective

    report = gradcheck_objective(
        frames=args.frames, actors=args.actors, model_dim=args.model_dim,
        groups=args.groups, actions=args.actions, batch_size=args.batch_size,
        seed=args.seed, step=args.step, tolerance=args.tolerance,
    )
    print(report.format_table())
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def _cmd_export_attention(args) -> int:
    cfg, params = load_model(args.config, args.checkpoint)
    _, episodes = read_dataset(args.data)
    if not 0 <= args.episode_index < len(episodes):
        raise SystemExit((EXIT_USAGE,
                          f"error: episode index {args.episode_index} outside [0, {len(episodes)})"))
    ep = episodes[args.episode_index]
    feats = embed_features(ep.features.astype(np.float64), params)
    actor = ActorTensor(features=feats, centers=ep.centers.astype(np.float64))
    _, path_outputs = forward_model(actor, ep.scene.astype(np.float64), params, trace=True)
    records = [rec for po in path_outputs.values() for tr in po.traces for rec in tr.records()]
    out = Path(args.out or "attention")
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / f"attention_episode{args.episode_index}.jsonl"
    with open(trace_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote {len(records)} records to {trace_path}")
    if not args.no_plots:
        from .plots import plot_attention_traces
        fig = plot_attention_traces(records, out / f"attention_episode{args.episode_index}.png")
        print(f"wrote {fig}")
    return EXIT_OK


def _cmd_probe(args) -> int:
    _, episodes = read_dataset(args.data)
    report = oracle_probe(episodes, default_scripts())
    print(report.format_table())
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
    "export-attention": _cmd_export_attention,
    "probe": _cmd_probe,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        if isinstance(exc.code, tuple):
            code, message = exc.code
            print(message, file=sys.stderr)
            return code
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except NumericalFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DatasetError, CheckpointError) as err:
        print(f"file format error: {err}", file=sys.stderr)
        return EXIT_IO
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
