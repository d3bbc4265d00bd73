"""
Command-line entry point: data generation, training, decomposition,
property measurement, compression, bounds and verification.
"""

import argparse
from collections.abc import Sequence
import json
import sys
from typing import Any, Optional

from pydantic import ValidationError

from .bound import generalization_bound
from .compression import compress, project, threshold_plan, verify
from .config import ALSConfig, Config, TrainConfig
from .exception import CPCertifyException, SchemaError
from .harness import corrupt_labels, make_synthetic, train
from .log import escape_tag, log, setup_logging
from .model import ReportFile
from .network import PRESETS, NetworkModel, cp_ify, preset
from .properties import VARIANTS, measure_properties
from .utils import (
    bound_rows,
    metric_rows,
    plan_rows,
    property_rows,
    read_dataset,
    read_model,
    read_report,
    write_csv,
    write_dataset,
    write_model,
    write_report,
)

METRIC_FIELDS = ("epoch", "lr", "loss", "train_acc", "clean_acc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _emit(payload: dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _fail(error: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": error, "message": message}) + "\n")
    return code


def _load_arch(arch: str, num_classes: int, seed: int) -> NetworkModel:
    if arch in PRESETS:
        return preset(arch, num_classes, seed)
    return read_model(arch)


def cmd_make_data(args: argparse.Namespace) -> int:
    dataset = make_synthetic(
        args.num_classes, args.per_class, args.input_shape, args.seed
    )
    dataset = corrupt_labels(dataset, args.corrupt_rate, args.seed)
    write_dataset(args.out, dataset)
    _emit({"samples": len(dataset), "out": args.out})
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    model = _load_arch(args.arch, args.num_classes, args.seed)
    if args.dataset:
        clean = read_dataset(args.dataset)
        per_class = max(1, len(clean) // clean.num_classes)
        classes, shape = clean.num_classes, clean.input_shape
    else:
        per_class, classes, shape = args.per_class, model.num_classes, model.input_shape
        clean = make_synthetic(classes, per_class, shape, args.seed)
    if args.holdout:
        holdout = read_dataset(args.holdout)
    else:
        holdout = make_synthetic(classes, per_class, shape, args.seed, args.seed + 1)
    dataset = corrupt_labels(clean, args.corrupt_rate, args.seed)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        lr_halving_period=args.lr_halving_period,
        seed=args.seed,
    )
    model, metrics = train(model, dataset, config, clean=holdout)
    write_model(args.out, model)
    if args.metrics:
        write_csv(args.metrics, metric_rows(metrics), METRIC_FIELDS)
    _emit(
        {
            "epochs": len(metrics),
            "final_loss": metrics[-1].loss if metrics else None,
            "out": args.out,
        }
    )
    return 0


def _parse_ranks(policy: str, depth: int) -> Optional[list[Optional[int]]]:
    if policy == "prop31":
        return None
    try:
        ranks: list[Optional[int]] = [int(r) for r in policy.split(",")]
    except ValueError as e:
        raise UsageError(f"invalid rank policy {policy!r}") from e
    if len(ranks) != depth:
        raise UsageError(f"{len(ranks)} ranks given for {depth} layers")
    return ranks


def cmd_decompose(args: argparse.Namespace) -> int:
    model = read_model(args.model)
    ranks = _parse_ranks(args.rank_policy, model.depth)
    als = ALSConfig(budget=args.tol, seed=args.seed, n_init=args.n_init)
    decomposed, errors = cp_ify(model, ranks, als, args.fc_mode, strict=True)
    write_model(args.out, decomposed)
    if args.report:
        write_report(args.report, ReportFile(als_errors=errors))
    _emit({"als_errors": errors, "out": args.out})
    return 0


def cmd_measure(args: argparse.Namespace) -> int:
    model = read_model(args.model)
    dataset = read_dataset(args.dataset)
    variants = VARIANTS if args.variant == "both" else (args.variant,)
    tables = [measure_properties(model, dataset, v) for v in variants]
    write_report(args.out, ReportFile(properties=tables))
    if args.csv:
        write_csv(args.csv, [row for t in tables for row in property_rows(t)])
    _emit({"layers": model.depth, "variants": list(variants), "out": args.out})
    return 0


def cmd_compress(args: argparse.Namespace) -> int:
    model = read_model(args.model)
    dataset = read_dataset(args.dataset)
    chosen = [v is not None for v in (args.gamma, args.epsilon, args.threshold)]
    if sum(chosen) != 1:
        raise UsageError("exactly one of --gamma, --epsilon, --threshold is needed")
    if args.threshold is not None:
        plan = threshold_plan(model, args.threshold)
        compressed = project(model, plan)
        report = verify(model, compressed, dataset)
    else:
        compressed, plan, report = compress(
            model,
            dataset,
            gamma=args.gamma,
            epsilon=args.epsilon,
            variant=args.variant,
            skip_aware=args.skip_aware,
        )
    write_model(args.out, compressed)
    if args.report:
        write_report(args.report, ReportFile(plan=plan, verification=report))
    if args.csv:
        write_csv(args.csv, plan_rows(plan))
    _emit(
        {
            "ranks": plan.ranks,
            "epsilon": plan.epsilon,
            "max_residual": report.max_residual,
            "out": args.out,
        }
    )
    return 0


def cmd_bound(args: argparse.Namespace) -> int:
    model = read_model(args.model)
    dataset = read_dataset(args.dataset)
    plan = read_report(args.plan).plan
    if plan is None:
        raise SchemaError(f"{args.plan} holds no compression plan")
    report = generalization_bound(model, dataset, args.gamma, plan)
    if args.out:
        write_report(args.out, ReportFile(plan=plan, bound=report))
    if args.csv:
        write_csv(args.csv, bound_rows(report))
    _emit(
        {
            "margin_loss": report.margin_loss,
            "d_eff": report.d_eff,
            "complexity": report.complexity,
            "bound": report.bound,
        }
    )
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    a = read_model(args.model_a)
    b = read_model(args.model_b)
    dataset = read_dataset(args.dataset)
    report = verify(a, b, dataset, args.epsilon)
    _emit(report.model_dump(exclude_none=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cp-certify", description=__doc__)
    parser.add_argument("--log-level", default=None, help="loguru level name")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-data", help="write a synthetic dataset")
    p.add_argument("--num-classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=64)
    p.add_argument("--input-shape", type=int, nargs="+", default=[8, 8, 1])
    p.add_argument("--corrupt-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="train a preset or model file")
    p.add_argument("--dataset", default=None)
    p.add_argument(
        "--holdout",
        default=None,
        help="clean held-out set; drawn from the class patterns of --seed if absent",
    )
    p.add_argument("--arch", default="toy-cnn", help=f"{', '.join(PRESETS)} or a file")
    p.add_argument("--num-classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=64)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--lr-halving-period", type=int, default=30)
    p.add_argument("--corrupt-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decompose", help="CP-decompose dense layers")
    p.add_argument("--model", required=True)
    p.add_argument("--rank-policy", default="prop31", help="prop31 or r1,r2,...")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--fc-mode", choices=("vectors", "matrices"), default="vectors")
    p.add_argument("--n-init", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("measure", help="measure layer properties")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument(
        "--variant", choices=(*VARIANTS, "both"), default="per_frequency"
    )
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("compress", help="select ranks and truncate")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--skip-aware", action="store_true")
    p.add_argument("--variant", choices=VARIANTS, default="per_frequency")
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("bound", help="evaluate the generalization bound")
    p.add_argument("--model", required=True)
    p.add_argument("--plan", required=True, help="report file holding a plan")
    p.add_argument("--dataset", required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("verify", help="max relative output deviation")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epsilon", type=float, default=None)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        level = args.log_level or Config.from_env().cp_certify_log_level
        setup_logging(level)
        return int(args.func(args))
    except UsageError as e:
        return _fail("UsageError", str(e), 2)
    except CPCertifyException as e:
        log("ERROR", f"<r>{escape_tag(repr(e))}</r>")
        code = 2 if isinstance(e, SchemaError) else 1
        return _fail(type(e).__name__, e.message, code)
    except (OSError, ValidationError, ValueError) as e:
        return _fail(type(e).__name__, str(e), 2)

