"""Command line entry point: ``edd {generate,train,evaluate,run,verify}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .core import WeightFileError
from .data import DatasetError, SchemaError, default_classes, default_schema, load_dataset, save_dataset
from .graph import MODEL_TAGS, PlanError, plan_for
from .harness import (
    ConfigError,
    ExperimentConfig,
    MetricsReport,
    arch_for,
    check_report,
    dataset_for,
    emit_report,
    evaluate,
    format_text,
    kb_for,
    load_weights,
    run_experiment,
    train_models,
)
from .network import ArchitectureError, TrainingDivergedError, build_network
from .verify import ConditionKB, KBError, default_kb, parse_fact, verify

log = logging.getLogger("edd")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_INPUT = 3  # unreadable or corrupt data, weight or KB files
EXIT_DIVERGED = 4

DATASET_FILE = "dataset.eddd"


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int):
        super().__init__(message)
        self.category = category
        self.code = code


def _models(text: str) -> tuple[str, ...]:
    tags = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in tags if t not in MODEL_TAGS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown model tags {bad}; choose from {','.join(MODEL_TAGS)}")
    return tags


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=_seed, help="override the config seed")
    common.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    common.add_argument("--models", type=_models, help="comma-separated model tags")
    common.add_argument("-v", "--verbose", action="store_true", help="log training progress")

    p = argparse.ArgumentParser(prog="edd", description="Class and attribute factorization experiments with attribute-based rejection.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="render the synthetic sign dataset to <out>/dataset.eddd")
    t = sub.add_parser("train", parents=[common], help="train models; writes weights/ and history/")
    t.add_argument("--data", type=Path, help="dataset file (default: regenerate from config)")
    e = sub.add_parser("evaluate", parents=[common], help="evaluate trained weights and write reports")
    e.add_argument("--data", type=Path, help="dataset file (default: regenerate from config)")
    e.add_argument("--weights", type=Path, help="weights directory (default: <out>/weights)")
    sub.add_parser("run", parents=[common], help="generate, train, evaluate and report")
    v = sub.add_parser("verify", parents=[common], help="adjudicate one prediction against the KB")
    v.add_argument("--predicted", required=True, help="predicted class name")
    v.add_argument("--attrs", required=True, help="comma-separated group=value pairs, one per group")
    v.add_argument("--kb", dest="kb_path", type=Path, help="KB file (default: built from class definitions)")
    return p


def config_from_args(args) -> ExperimentConfig:
    if args.config is not None:
        try:
            cfg = ExperimentConfig.load(args.config)
        except OSError as exc:
            raise CliError("config", f"cannot read {args.config}: {exc.strerror}", EXIT_USAGE) from None
    else:
        cfg = ExperimentConfig()
    d = cfg.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["out_dir"] = str(args.out)
    if args.models is not None:
        d["models"] = list(args.models)
    if getattr(args, "kb_path", None) is not None:
        d["kb"] = str(args.kb_path)
    return ExperimentConfig.from_dict(d)


def _split(cfg: ExperimentConfig, data: Path | None):
    if data is None:
        return dataset_for(cfg)
    return load_dataset(data)


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    split = dataset_for(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(split, out / DATASET_FILE)
    print(f"wrote {out / DATASET_FILE}: {len(split.train)} train, {len(split.test)} test, fingerprint {split.fingerprint()}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    split = _split(cfg, args.data)
    out = Path(cfg.out_dir)
    trained = train_models(cfg, split, out)
    for tag, (net, hist) in trained.items():
        last = hist[-1]
        print(f"{tag}: {net.parameter_count()} parameters, final loss {last.loss:.4f}")
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    split = _split(cfg, args.data)
    kb = kb_for(cfg, split)
    wdir = args.weights or Path(cfg.out_dir) / "weights"
    rows = []
    for tag in cfg.models:
        net = build_network(plan_for(tag, split.schema), split.schema, split.num_classes, arch_for(cfg, tag))
        load_weights(net, wdir / f"{tag}.eddw")
        rows.append(evaluate(net, split, kb, cfg.reject_policy))
    report = MetricsReport(rows, meta={"seed": cfg.seed, "dataset_fingerprint": split.fingerprint(),
                                       "reject_policy": cfg.reject_policy})
    emit_report(report, cfg.out_dir, cfg.formats)
    sys.stdout.write(format_text(report))
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, args) -> int:
    report = run_experiment(cfg)
    sys.stdout.write(format_text(report))
    problems = check_report(report)
    for p in problems:
        print(f"warning: {p}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    schema = default_schema()
    classes = default_classes(schema)
    kb = default_kb(schema, classes) if cfg.kb == "default" else ConditionKB.load(cfg.kb, schema)
    try:
        predicted = kb.class_names.index(args.predicted)
    except ValueError:
        raise CliError("usage", f"unknown class {args.predicted!r}; choose from {', '.join(kb.class_names)}", EXIT_USAGE) from None
    try:
        attrs = dict(parse_fact(f) for f in args.attrs.split(",") if f.strip())
    except KBError as exc:
        raise CliError("usage", f"--attrs: {exc}", EXIT_USAGE) from None
    missing = [g for g in schema.names if g not in attrs]
    extra = [g for g in attrs if g not in schema.names]
    if missing or extra:
        raise CliError("usage", f"--attrs needs exactly one value for each of {', '.join(schema.names)}", EXIT_USAGE)
    result = verify(predicted, {g: attrs[g] for g in schema.names}, kb, cfg.reject_policy)
    print(result.justification)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "run": cmd_run, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg, args)
    except CliError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ArchitectureError, PlanError, SchemaError, ValueError) as exc:
        if isinstance(exc, (DatasetError, WeightFileError, KBError)):
            print(f"error[input]: {exc}", file=sys.stderr)
            return EXIT_INPUT
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"error[diverged]: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
