"""Command line interface.

Sub-commands::

    gen-data            write a synthetic dataset directory
    train               fit a model, write checkpoint.apck and metrics.csv
    eval                score a checkpoint on one partition of a dataset
    ablate              train and score every (loss variant, model variant) pair
    sweep               metrics over context counts and context modes
    traces              per-frame mean and sampled predictions of one sequence
    inspect-checkpoint  list tensors and the stored run configuration

Configuration flags are generated from the fields of :class:`RunConfig`,
:class:`ModelConfig` and :class:`SyntheticSpec` (``lambda_kl`` becomes
``--lambda-kl``), so every flag maps onto exactly one field and inherits its
default.

Exit status: 0 success, 1 usage error, 2 data error (unreadable or malformed
dataset / checkpoint), 3 runtime or numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence as Seq

import numpy as np

from .checkpoint import load_checkpoint
from .config import (
    CONTEXT_MODES,
    LOSS_VARIANTS,
    MODEL_VARIANTS,
    PROTOCOL_CONSTANTS,
    REG_POOLING,
    TASKS,
    ModelConfig,
    RunConfig,
)
from .data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset, split, spec_to_dict
from .errors import APError, CheckpointError, ContractError, DataFormatError
from .evaluation import (
    SWEEP_COLUMNS,
    context_sweep,
    evaluate,
    sample_traces,
    write_table,
)
from .training import train

log = logging.getLogger("affective_processes")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
DEFAULT_SEED = 0
PARTITIONS = ("train", "val", "test", "all")


class UsageError(Exception):
    """Bad flag value or flag combination (exit status 1)."""


class DataError(Exception):
    """Missing, unreadable or inconsistent input file (exit status 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _int_tuple(text: str):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")


def _str_list(choices):
    def parse(text: str):
        items = [v.strip() for v in text.split(",") if v.strip()]
        bad = [v for v in items if v not in choices]
        if bad or not items:
            raise argparse.ArgumentTypeError(f"choose from {', '.join(choices)}; got {text!r}")
        return items
    return parse


_CHOICES = {
    "task": TASKS,
    "loss_variant": LOSS_VARIANTS,
    "reg_pooling": REG_POOLING,
    "eval_context_mode": CONTEXT_MODES,
    "variant": MODEL_VARIANTS,
}

# fields whose default depends on the task or on the dataset
_TASK_DEFAULTS = ("batch_size", "lr", "weight_decay")
_DATA_DEFAULTS = ("feature_dim", "label_dim")


def _add_dataclass_flags(group, cls, skip=(), dest_prefix="", aliases=None, help_for=None):
    aliases = aliases or {}
    help_for = help_for or {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = f.default if f.default is not dataclasses.MISSING else None
        kwargs = {"dest": dest_prefix + f.name, "default": None}
        if isinstance(default, tuple):
            kwargs["type"] = _int_tuple
            shown = ",".join(map(str, default))
        elif isinstance(default, bool):
            kwargs["type"] = lambda s: s.lower() in ("1", "true", "yes")
            shown = str(default)
        else:
            kwargs["type"] = type(default)
            shown = str(default)
        if f.name in _CHOICES:
            kwargs["choices"] = _CHOICES[f.name]
        kwargs["help"] = help_for.get(f.name, f"default: {shown}")
        group.add_argument(_flag(f.name), *aliases.get(f.name, ()), **kwargs)


def _collect(args, cls, prefix="", skip=()) -> Dict[str, object]:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        v = getattr(args, prefix + f.name, None)
        if v is not None:
            out[f.name] = v
    return out


def _name_flags(message: str, fields: Seq[str]) -> str:
    """Rewrite field names inside a validation message as the matching flags."""
    for name in sorted(fields, key=len, reverse=True):
        message = re.sub(rf"(?<![\w-]){re.escape(name)}(?![\w])", _flag(name), message)
    return message


_RUN_FIELDS = [f.name for f in dataclasses.fields(RunConfig) if f.name != "model"]
_MODEL_FIELDS = [f.name for f in dataclasses.fields(ModelConfig)]
_SPEC_FIELDS = [f.name for f in dataclasses.fields(SyntheticSpec)]


def _seed_flag(p):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help=f"random seed (default: {DEFAULT_SEED}); printed on start")


def _training_flags(p, with_variants=True):
    help_for = {
        "batch_size": "default: %d (valence_arousal) / %d (action_units)" % (
            PROTOCOL_CONSTANTS["valence_arousal"]["batch_size"], PROTOCOL_CONSTANTS["action_units"]["batch_size"]),
        "lr": "default: %g (valence_arousal) / %g (action_units)" % (
            PROTOCOL_CONSTANTS["valence_arousal"]["lr"], PROTOCOL_CONSTANTS["action_units"]["lr"]),
        "weight_decay": "default: %g (valence_arousal) / %g (action_units)" % (
            PROTOCOL_CONSTANTS["valence_arousal"]["weight_decay"], PROTOCOL_CONSTANTS["action_units"]["weight_decay"]),
        "feature_dim": "default: taken from the dataset",
        "label_dim": "default: taken from the dataset",
    }
    g = p.add_argument_group("run configuration")
    _add_dataclass_flags(g, RunConfig, skip=("model", "seed"), aliases={"iters_per_epoch": ("--iters",)},
                         help_for=help_for)
    g = p.add_argument_group("model configuration")
    skip = () if with_variants else ("variant",)
    _add_dataclass_flags(g, ModelConfig, skip=skip, dest_prefix="model_", help_for=help_for)
    p.add_argument("--data", required=True, help="dataset directory or its manifest.json")
    p.add_argument("--split", type=_int_tuple, default=PROTOCOL_CONSTANTS["split_ratios"],
                   help="train,val,test ratios (default: 8,1,1); partitioned with --seed")
    _seed_flag(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="affective-processes", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    _add_dataclass_flags(p.add_argument_group("synthetic generator"), SyntheticSpec, dest_prefix="spec_")
    _seed_flag(p)

    p = sub.add_parser("train", help="train one model")
    _training_flags(p)
    p.add_argument("--out", required=True, help="run directory for checkpoint.apck and metrics.csv")

    p = sub.add_parser("ablate", help="train and evaluate the loss x model variant grid")
    _training_flags(p, with_variants=False)
    p.add_argument("--loss-variants", type=_str_list(LOSS_VARIANTS), default=list(LOSS_VARIANTS),
                   help="comma separated (default: all)")
    p.add_argument("--variants", type=_str_list(MODEL_VARIANTS), default=list(MODEL_VARIANTS),
                   help="comma separated model variants (default: all)")
    p.add_argument("--out", required=True, help="output table (comma separated)")
    p.add_argument("--runs-dir", default=None, help="optional directory for one run folder per pair")

    def eval_flags(p, counts=False):
        p.add_argument("--checkpoint", required=True, help="checkpoint file written by train")
        p.add_argument("--data", required=True, help="dataset directory or its manifest.json")
        p.add_argument("--partition", choices=PARTITIONS, default="test",
                       help="which part of the stored split to score (default: test)")
        p.add_argument("--window-len", type=int, default=PROTOCOL_CONSTANTS["test_seq_len"],
                       help=f"evaluation window (default: {PROTOCOL_CONSTANTS['test_seq_len']})")
        p.add_argument("--min-context", type=int, default=PROTOCOL_CONSTANTS["context_min"],
                       help=f"shortest final window kept (default: {PROTOCOL_CONSTANTS['context_min']})")
        _seed_flag(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    eval_flags(p)
    p.add_argument("--context-mode", choices=CONTEXT_MODES, default="lowest", help="default: lowest")
    p.add_argument("--num-context", type=int, default=PROTOCOL_CONSTANTS["num_context_eval"],
                   help=f"default: {PROTOCOL_CONSTANTS['num_context_eval']}")
    p.add_argument("--out", default=None, help="optional report table")

    p = sub.add_parser("sweep", help="metrics over context counts and modes")
    eval_flags(p)
    p.add_argument("--counts", type=_int_tuple, default=(3, 5, 10, 20, 30, 40, 50, 60, 70),
                   help="comma separated context counts (default: 3,5,10,20,30,40,50,60,70)")
    p.add_argument("--modes", type=_str_list(CONTEXT_MODES), default=list(CONTEXT_MODES),
                   help="comma separated (default: lowest,highest,random)")
    p.add_argument("--out", required=True, help="output table")

    p = sub.add_parser("traces", help="mean and sampled predictions for one sequence")
    eval_flags(p)
    p.add_argument("--sequence", default="0",
                   help="sequence id, or its index within the partition (default: 0)")
    p.add_argument("--num-context", type=int, default=PROTOCOL_CONSTANTS["num_context_eval"],
                   help=f"default: {PROTOCOL_CONSTANTS['num_context_eval']}")
    p.add_argument("--num-samples", type=int, default=10, help="latent draws (default: 10)")
    p.add_argument("--out", required=True, help="output table")

    p = sub.add_parser("inspect-checkpoint", help="print tensor names, shapes and the run config")
    p.add_argument("checkpoint", help="checkpoint file")
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _load_data(path: str):
    try:
        return load_dataset(path)
    except DataFormatError as exc:
        raise DataError(f"--data: {exc}") from exc
    except FileNotFoundError as exc:
        raise DataError(f"--data: {path}: no such file or directory") from exc


def _partition(sequences, ratios, seed: int, which: str):
    if which == "all":
        return list(sequences)
    try:
        parts = split(sequences, ratios, np.random.default_rng(seed))
    except ContractError as exc:
        raise UsageError(f"--split: {exc}") from exc
    return list(parts[PARTITIONS.index(which)])


def _run_config(args, data) -> RunConfig:
    run = _collect(args, RunConfig, skip=("model", "seed"))
    model = _collect(args, ModelConfig, prefix="model_")
    F, L = data[0].feature_dim, data[0].label_dim
    for name, actual in (("feature_dim", F), ("label_dim", L)):
        if model.setdefault(name, actual) != actual:
            raise DataError(f"{_flag(name)}={model[name]} but the dataset at --data has {name} {actual}")
    try:
        return RunConfig.for_task(run.pop("task", TASKS[0]), model=ModelConfig(**model), seed=args.seed, **run)
    except ContractError as exc:
        raise UsageError(_name_flags(str(exc), _RUN_FIELDS + _MODEL_FIELDS)) from exc


def _load_ckpt(path: str):
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise DataError(f"--checkpoint: {exc}") from exc


def _eval_inputs(args):
    params, config, meta = _load_ckpt(args.checkpoint)
    data = _load_data(args.data)
    if data[0].feature_dim != config.model.feature_dim or data[0].label_dim != config.model.label_dim:
        raise DataError(
            f"--data: dataset dims ({data[0].feature_dim}, {data[0].label_dim}) do not match "
            f"checkpoint ({config.model.feature_dim}, {config.model.label_dim})"
        )
    ratios = tuple(meta.get("split", PROTOCOL_CONSTANTS["split_ratios"]))
    split_seed = int(meta.get("split_seed", config.seed))
    seqs = _partition(data, ratios, split_seed, args.partition)
    if not seqs:
        raise DataError(f"--partition {args.partition}: no sequences")
    return params, config, seqs


def _print_seed(seed: int) -> None:
    print(f"seed: {seed}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    _print_seed(args.seed)
    try:
        spec = SyntheticSpec(**_collect(args, SyntheticSpec, prefix="spec_"))
    except ContractError as exc:
        raise UsageError(_name_flags(str(exc), _SPEC_FIELDS)) from exc
    seqs = generate_synthetic(spec, np.random.default_rng(args.seed))
    if not seqs:
        raise UsageError("--num-sequences must be at least 1")
    out = save_dataset(seqs, args.out)
    with open(out / "generator.json", "w") as fh:
        json.dump({"seed": args.seed, "spec": spec_to_dict(spec)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(seqs)} sequences to {out}")
    return EXIT_OK


def _split_ratios(args):
    if len(args.split) != 3 or min(args.split) < 0 or sum(args.split) <= 0:
        raise UsageError(f"--split needs three non-negative ratios, got {args.split}")
    return tuple(args.split)


def cmd_train(args) -> int:
    _print_seed(args.seed)
    data = _load_data(args.data)
    config = _run_config(args, data)
    ratios = _split_ratios(args)
    tr = _partition(data, ratios, args.seed, "train")
    va = _partition(data, ratios, args.seed, "val")
    meta = {"split": list(ratios), "split_seed": args.seed}

    def report(row):
        log.info("epoch %d  loss %.4f  val_ccc %.4f", row["epoch"], row["loss_total"], row["val_ccc"])

    res = train(config, tr, va, out_dir=args.out, on_epoch=report, metadata=meta)
    last = res.history[-1]
    print(f"trained {config.total_steps} steps; best epoch {res.best_epoch}; "
          f"final loss {last['loss_total']:.6g}; val mean CCC {last['val_ccc']:.4f}")
    print(f"wrote {Path(args.out) / 'checkpoint.apck'} and {Path(args.out) / 'metrics.csv'}")
    return EXIT_OK


ABLATE_COLUMNS = ("loss_variant", "variant", "context_mode", "num_context", "mean_ccc", "mean_icc",
                  "mean_mse", "nll", "best_epoch")


def cmd_ablate(args) -> int:
    _print_seed(args.seed)
    data = _load_data(args.data)
    base = _run_config(args, data)
    ratios = _split_ratios(args)
    tr, va, te = (_partition(data, ratios, args.seed, w) for w in ("train", "val", "test"))
    if not te:
        raise DataError("--data: the test partition is empty")
    rows = []
    for loss_variant in args.loss_variants:
        for variant in args.variants:
            config = base.replace(loss_variant=loss_variant).with_model(variant=variant)
            run_dir = None
            if args.runs_dir is not None:
                run_dir = Path(args.runs_dir) / f"{variant}__{loss_variant}".replace("+", "_")
            res = train(config, tr, va, out_dir=run_dir,
                        metadata={"split": list(ratios), "split_seed": args.seed})
            mode = config.eval_context_mode if config.model.stochastic else "random"
            rep = evaluate(res.best_params, config.model, te, window_len=config.test_seq_len,
                           num_context=config.num_context_eval, context_mode=mode,
                           min_context=config.context_min, seed=args.seed)
            row = {"loss_variant": loss_variant, "variant": variant, **rep.as_row(), "best_epoch": res.best_epoch}
            rows.append(row)
            print(f"{variant:>15s} {loss_variant:>11s}  CCC {rep.mean_ccc:.4f}  ICC {rep.mean_icc:.4f}  "
                  f"MSE {rep.mean_mse:.4f}")
    columns = list(ABLATE_COLUMNS) + [c for c in rows[0] if c not in ABLATE_COLUMNS]
    write_table(rows, args.out, columns)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _print_seed(args.seed)
    params, config, seqs = _eval_inputs(args)
    try:
        rep = evaluate(params, config.model, seqs, window_len=args.window_len, num_context=args.num_context,
                       context_mode=args.context_mode, min_context=args.min_context, seed=args.seed)
    except ContractError as exc:
        raise UsageError(f"--num-context/--window-len: {exc}") from exc
    row = rep.as_row()
    print(",".join(row))
    print(",".join(str(v) for v in row.values()))
    if args.out:
        write_table([row], args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    _print_seed(args.seed)
    params, config, seqs = _eval_inputs(args)
    try:
        rows = context_sweep(params, config.model, seqs, args.counts, args.modes, window_len=args.window_len,
                             min_context=args.min_context, seed=args.seed)
    except ContractError as exc:
        raise UsageError(f"--counts: {exc}") from exc
    write_table(rows, args.out, SWEEP_COLUMNS)
    for r in rows:
        print(f"{r['num_context']:4d} {r['context_mode']:>8s}  CCC {r['mean_ccc']:.4f}  NLL {r['nll']:.4f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_traces(args) -> int:
    _print_seed(args.seed)
    params, config, seqs = _eval_inputs(args)
    by_id = {s.id: s for s in seqs}
    if args.sequence in by_id:
        seq = by_id[args.sequence]
    elif args.sequence.isdigit() and int(args.sequence) < len(seqs):
        seq = seqs[int(args.sequence)]
    else:
        raise UsageError(f"--sequence {args.sequence!r}: not an id or index in the {args.partition} partition")
    if args.num_context < 1:
        raise UsageError("--num-context must be positive")
    try:
        tr = sample_traces(params, config.model, seq, args.num_context, args.num_samples,
                           np.random.default_rng(args.seed))
    except ContractError as exc:
        raise UsageError(f"--num-samples: {exc}") from exc
    write_table(tr.rows(), args.out)
    print(f"sequence {seq.id}: {len(seq)} frames, {int(tr.context_mask.sum())} context frames, "
          f"{args.num_samples} samples; wrote {args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        params, config, meta = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc
    total = 0
    for name, arr in params.items():
        total += arr.size
        print(f"{name:24s} {'x'.join(map(str, arr.shape))}")
    print(f"total parameters: {total}")
    print("run_config:", json.dumps(config.to_dict(), indent=2, sort_keys=True))
    print("metadata:", json.dumps(meta, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "traces": cmd_traces,
    "inspect-checkpoint": cmd_inspect,
}


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv`` and execute one command; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DataFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (APError, FloatingPointError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
