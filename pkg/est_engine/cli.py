"""
The `est` command.

    est train --config run.cfg --out runs/a [--resume runs/a/checkpoints/step-00000050]
    est plan --preset practical-gpt2 [--scale 0.01] [--csv plan.csv]
    est eval --ckpt runs/a/checkpoints/step-00003000 --data valid.txt
    est hessian-trace --ckpt ... --data valid.txt --probes 64
    est curves --log runs/a/loss_log.csv [--log2 runs/b/loss_log.csv] --out curves.csv

Exit codes: 0 success, 1 usage, config or input errors, 2 numerical aborts.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from est_engine.autodiff import set_precision
from est_engine.cost_model import module_costs, total_cost
from est_engine.diagnostics import (
    DEFAULT_FD_EPSILON,
    epsilon_stability,
    model_gradient_fn,
    model_hessian_trace,
    slope_compare,
    transition_drop,
)
from est_engine.exceptions import (
    CheckpointError,
    ConfigError,
    CorpusError,
    InsufficientLogError,
    InvalidMaskError,
    NonFiniteError,
    StreamTerminatedError,
)
from est_engine.model import ModelConfig
from est_engine.scheduler import list_presets, preset
from est_engine.training import (
    LossLog,
    RunManifest,
    evaluate,
    load_checkpoint,
    load_corpus,
    load_train_config,
    train,
)
from est_engine.training.data import eval_batches
from est_engine.utils import format_pydantic_error

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

DEFAULT_PLAN_MODEL = "gpt2-base"
PRESET_MODELS = {"practical-tinyllama": "tinyllama-1.1b"}
DEFAULT_PLAN_BATCH = 8


class ArgumentParser(argparse.ArgumentParser):
    """Exits with status 1 on usage errors."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def configure_logging(log_file: Path | None = None, verbose: bool = False) -> None:
    """
    Send warnings to stderr without timestamps and, when `log_file` is
    given, every record with timestamps to that file.
    """
    root = logging.getLogger("est_engine")
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO if verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(console)

    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
        )
        root.addHandler(file_handler)
    logging.captureWarnings(True)


def cmd_train(args: argparse.Namespace) -> int:
    config = load_train_config(args.config)
    run = RunManifest(root=args.out).create()
    configure_logging(run.log_path, args.verbose)

    train(config, run=run, resume=args.resume)
    print(run.summary_path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _preset_model(name: str) -> str:
    return PRESET_MODELS.get(name, DEFAULT_PLAN_MODEL)


def cmd_plan(args: argparse.Namespace) -> int:
    configure_logging(verbose=args.verbose)
    if args.list:
        for name in list_presets():
            print(name)
        return EXIT_OK

    if args.config is not None:
        config = load_train_config(args.config)
        sched, model = config.scheduler, config.model
        tokens, multiplier = config.tokens_per_step, config.backward_multiplier
    elif args.preset is not None:
        sched = preset(args.preset, args.scale)
        model = ModelConfig.named(args.model or _preset_model(args.preset))
        tokens, multiplier = args.batch_size * model.seq_len, args.backward_multiplier
    else:
        raise ConfigError("plan needs --config, --preset or --list")

    costs = module_costs(model, tokens, multiplier)
    report = total_cost(sched, costs, model.n_layers)
    print(report.summary())
    if args.csv is not None:
        report.to_frame().to_csv(args.csv, index=False, lineterminator="\n")
    return EXIT_OK


def _checkpoint_and_corpus(args: argparse.Namespace):
    checkpoint = load_checkpoint(args.ckpt)
    model = checkpoint.config.model
    corpus = load_corpus(args.data, model.vocab, model.seq_len + 1)
    seed = checkpoint.config.seed
    if args.seed is not None:
        seed = seed.model_copy(update={"seed": args.seed})
    batch_size = args.batch_size or checkpoint.config.batch_size
    return checkpoint, corpus, seed, batch_size


def cmd_eval(args: argparse.Namespace) -> int:
    configure_logging(verbose=args.verbose)
    checkpoint, corpus, seed, batch_size = _checkpoint_and_corpus(args)
    loss = evaluate(checkpoint.params, corpus, args.batches, batch_size, seed)
    print(f"step: {checkpoint.step}")
    print(f"eval loss: {loss:.6f}")
    return EXIT_OK


def cmd_hessian_trace(args: argparse.Namespace) -> int:
    configure_logging(verbose=args.verbose)
    checkpoint, corpus, seed, batch_size = _checkpoint_and_corpus(args)
    set_precision("fp64")
    params = checkpoint.params.converted()
    seq_len = params.config.seq_len
    batches = eval_batches(corpus, args.batches, batch_size, seq_len, seed)

    estimate = model_hessian_trace(
        params, batches, args.probes, args.fd_epsilon, seed, args.probe
    )
    print(f"step: {checkpoint.step}")
    print(f"trace: {estimate.value:.6g}")
    print(f"std_error: {estimate.std_error:.6g}")
    print(f"probes: {estimate.n_probes}")
    print(f"fd_epsilon: {estimate.fd_epsilon:g}")

    if args.check_stability:
        theta = params.flatten()
        report = epsilon_stability(
            theta, model_gradient_fn(params, batches), args.probes, seed
        )
        params.assign_flat(theta)
        print(f"epsilon gap: {100 * report.relative_gap:.1f}%")
        print(f"stable: {'yes' if report.stable else 'no'}")

    if args.csv is not None:
        pd.DataFrame(
            {"probe": np.arange(1, estimate.n_probes + 1), "value": estimate.samples}
        ).to_csv(args.csv, index=False, lineterminator="\n")
    return EXIT_OK


def _read_log(path: Path) -> LossLog:
    try:
        return LossLog.read_csv(path)
    except FileNotFoundError as ex:
        raise ConfigError(f"Loss log {path} not found") from ex
    except (ValueError, pd.errors.ParserError) as ex:
        raise ConfigError(f"Loss log {path} is not valid: {ex}") from ex


def _reachable_level(logs: Sequence[LossLog], smoothing: int) -> float:
    lowest = [
        log.to_frame()["loss"].rolling(smoothing, min_periods=smoothing).mean().min()
        for log in logs
    ]
    if any(pd.isna(v) for v in lowest):
        raise InsufficientLogError(f"logs need at least {smoothing} records")
    return float(max(lowest))


def cmd_curves(args: argparse.Namespace) -> int:
    configure_logging(verbose=args.verbose)
    logs = {"a": _read_log(args.log)}
    if args.log2 is not None:
        logs["b"] = _read_log(args.log2)

    rows = []
    for label, log in logs.items():
        for report in transition_drop(log, None, args.window):
            rows.append(
                {
                    "log": label,
                    "step": report.step,
                    "pre_mean": report.pre_mean,
                    "post_mean": report.post_mean,
                    "drop": report.drop,
                    "window": report.window,
                }
            )
            print(f"log {label} transition {report.step}: drop {report.drop:.6g}")
    columns = ["log", "step", "pre_mean", "post_mean", "drop", "window"]
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(args.out, index=False, lineterminator="\n")

    if "b" in logs:
        level = args.level
        if level is None:
            level = _reachable_level(list(logs.values()), args.smoothing)
        comparison = slope_compare(
            logs["a"], logs["b"], level, args.slope_window, args.smoothing
        )
        print(f"loss level: {comparison.loss_level:.6g}")
        print(f"log a slope: {comparison.slope_a:.6g} at step {comparison.step_a}")
        print(f"log b slope: {comparison.slope_b:.6g} at step {comparison.step_b}")
        slopes_path = args.slopes_out or args.out.with_name(
            args.out.stem + "_slopes.csv"
        )
        pd.DataFrame([comparison.model_dump()]).to_csv(
            slopes_path, index=False, lineterminator="\n"
        )
    return EXIT_OK


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="est", description="Evolving subnetwork training engine."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help: str) -> ArgumentParser:
        sub = commands.add_parser(name, help=help)
        sub.add_argument(
            "--verbose", action="store_true", help="Log progress to stderr."
        )
        return sub

    sub = add("train", "Train a model from a config file.")
    sub.add_argument("--config", type=Path, required=True)
    sub.add_argument("--out", type=Path, required=True, help="Run directory.")
    sub.add_argument(
        "--resume", type=Path, help="Checkpoint directory to continue from."
    )
    sub.set_defaults(handler=cmd_train)

    sub = add("plan", "Print the training cost of a scheduler.")
    source = sub.add_mutually_exclusive_group()
    source.add_argument("--config", type=Path)
    source.add_argument("--preset", choices=list_presets())
    source.add_argument("--list", action="store_true", help="List the presets.")
    sub.add_argument("--scale", type=float, help="Scale the preset's end steps.")
    sub.add_argument(
        "--model",
        help="Architecture for --preset. Defaults to the one the preset was made for.",
    )
    sub.add_argument("--batch-size", type=int, default=DEFAULT_PLAN_BATCH)
    sub.add_argument("--backward-multiplier", type=float, default=2.0)
    sub.add_argument("--csv", type=Path, help="Write the stage table here.")
    sub.set_defaults(handler=cmd_plan)

    for name, help, handler in (
        ("eval", "Evaluate a checkpoint on a corpus.", cmd_eval),
        (
            "hessian-trace",
            "Estimate the loss Hessian trace of a checkpoint.",
            cmd_hessian_trace,
        ),
    ):
        sub = add(name, help)
        sub.add_argument("--ckpt", type=Path, required=True)
        sub.add_argument("--data", type=Path, required=True)
        sub.add_argument("--batches", type=int, default=8)
        sub.add_argument("--batch-size", type=int)
        sub.add_argument("--seed", type=int, help="Defaults to the checkpoint's seed.")
        sub.set_defaults(handler=handler)
        if name == "hessian-trace":
            sub.add_argument("--probes", type=int, default=64)
            sub.add_argument("--fd-epsilon", type=float, default=DEFAULT_FD_EPSILON)
            sub.add_argument(
                "--probe", choices=["rademacher", "gaussian"], default="rademacher"
            )
            sub.add_argument("--check-stability", action="store_true")
            sub.add_argument("--csv", type=Path, help="Write per-probe values here.")

    sub = add("curves", "Analyse loss logs: transition drops and slopes.")
    sub.add_argument("--log", type=Path, required=True)
    sub.add_argument("--log2", type=Path)
    sub.add_argument("--out", type=Path, required=True)
    sub.add_argument("--slopes-out", type=Path)
    sub.add_argument("--window", type=int, default=50)
    sub.add_argument("--level", type=float)
    sub.add_argument("--slope-window", type=int, default=100)
    sub.add_argument("--smoothing", type=int, default=50)
    sub.set_defaults(handler=cmd_curves)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except NonFiniteError as ex:
        logger.error("Numerical abort: %s", ex)
        print(f"error: {ex}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValidationError as ex:
        print(f"error: invalid input\n{format_pydantic_error(ex)}", file=sys.stderr)
        return EXIT_USAGE
    except (
        ConfigError,
        CorpusError,
        CheckpointError,
        InsufficientLogError,
        InvalidMaskError,
        StreamTerminatedError,
        FileNotFoundError,
        LookupError,
    ) as ex:
        print(f"error: {ex}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
