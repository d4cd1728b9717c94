"""Experiment orchestration: train the requested models, evaluate with and without the reject option, write reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import ParameterStore, WeightFileError
from .data import (
    AttributeSchema,
    DatasetConfig,
    DatasetSplit,
    build_dataset,
    default_classes,
    default_schema,
    load_dataset,
)
from .graph import MODEL_TAGS, plan_for
from .network import ArchitectureConfig, EddNetwork, EpochRecord, accuracy_z, build_network, predict_batch, train
from .verify import Belnap, ConditionKB, Policy, belnap_category, candidate_classes, decide, default_kb

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "model",
    "acc_y",
    "acc_z",
    "acc_y_reject",
    "rejection_rate",
    "n_test",
    "n_accepted",
    "belnap_true",
    "belnap_both",
    "belnap_false",
    "belnap_none",
)
ABSENT = "n/a"  # metric does not exist for this model (class-only)
UNDEFINED = "undefined"  # metric exists but has no samples (nothing accepted)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    arch: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    models: tuple[str, ...] = MODEL_TAGS
    kb: str = "default"  # "default" or a path to a KB file
    out_dir: str = "runs/default"
    seed: int = 0
    reject_policy: str = "strict"
    formats: tuple[str, ...] = ("text", "csv", "json")

    def __post_init__(self):
        self.models = tuple(self.models)
        self.formats = tuple(self.formats)
        if not self.models:
            raise ConfigError("at least one model tag is required")
        bad = [m for m in self.models if m not in MODEL_TAGS]
        if bad:
            raise ConfigError(f"unknown model tags {bad}; choose from {list(MODEL_TAGS)}")
        if self.seed is None or int(self.seed) < 0:
            raise ConfigError("a non-negative integer seed is required")
        self.seed = int(self.seed)
        Policy(self.reject_policy)
        bad = [f for f in self.formats if f not in ("text", "csv", "json")]
        if bad:
            raise ConfigError(f"unknown report formats {bad}")

    def to_dict(self) -> dict:
        return {
            "dataset": asdict(self.dataset),
            "arch": self.arch.to_dict(),
            "models": list(self.models),
            "kb": self.kb,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "reject_policy": self.reject_policy,
            "formats": list(self.formats),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        known = {"dataset", "arch", "models", "kb", "out_dir", "seed", "reject_policy", "formats"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        kw = dict(d)
        try:
            if "dataset" in kw:
                kw["dataset"] = DatasetConfig(**kw["dataset"])
            if "arch" in kw:
                kw["arch"] = ArchitectureConfig.from_dict(kw["arch"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def model_seed(seed: int, tag: str) -> int:
    """Per-model seed derived from the run seed, independent of model order."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def arch_for(config: ExperimentConfig, tag: str) -> ArchitectureConfig:
    d = config.arch.to_dict()
    d["seed"] = model_seed(config.seed, tag)
    return ArchitectureConfig.from_dict(d)


def dataset_for(config: ExperimentConfig) -> DatasetSplit:
    d = asdict(config.dataset)
    d["seed"] = config.seed
    return build_dataset(default_schema(), default_classes(), DatasetConfig(**d))


def kb_for(config: ExperimentConfig, split: DatasetSplit) -> ConditionKB:
    if config.kb == "default":
        return default_kb(split.schema, split.classes)
    kb = ConditionKB.load(config.kb, split.schema)
    kb.check_against(split.classes)
    return kb


@dataclass
class ModelMetrics:
    model: str
    n_test: int
    acc_y: float
    acc_z: float | None = None
    acc_z_strict: float | None = None
    acc_y_reject: float | str | None = None  # UNDEFINED when nothing is accepted
    rejection_rate: float | None = None
    n_accepted: int | None = None
    belnap_true: int | None = None
    belnap_both: int | None = None
    belnap_false: int | None = None
    belnap_none: int | None = None

    @property
    def n_rejected(self) -> int | None:
        return None if self.n_accepted is None else self.n_test - self.n_accepted


def _pct(x: float) -> float:
    return round(100.0 * float(x), 2)


def evaluate_predictions(
    model: str,
    y_pred: np.ndarray,
    z_pred: np.ndarray | None,
    y_true: np.ndarray,
    z_true: np.ndarray,
    kb: ConditionKB | None,
    policy: Policy | str = Policy.STRICT,
) -> ModelMetrics:
    """Metric suite over hard predictions; ``z_pred=None`` marks a class-only model."""
    y_pred = np.asarray(y_pred)
    y_true = np.asarray(y_true)
    n = len(y_true)
    if n == 0:
        raise ValueError("cannot evaluate on an empty test set")
    correct = y_pred == y_true
    m = ModelMetrics(model, n, _pct(correct.mean()))
    if z_pred is None or kb is None:
        return m
    z_pred = np.asarray(z_pred)
    m.acc_z = round(accuracy_z(z_pred, z_true), 2)
    m.acc_z_strict = _pct((z_pred == z_true).all(axis=1).mean())
    counts = {b: 0 for b in Belnap}
    accepted = np.zeros(n, dtype=bool)
    for i in range(n):
        cands = candidate_classes(z_pred[i], kb)
        counts[belnap_category(int(y_pred[i]), cands)] += 1
        accepted[i] = decide(int(y_pred[i]), cands, policy) == "accept"
    m.n_accepted = int(accepted.sum())
    m.rejection_rate = _pct(1.0 - accepted.mean())
    m.acc_y_reject = _pct(correct[accepted].mean()) if accepted.any() else UNDEFINED
    m.belnap_true = counts[Belnap.TRUE]
    m.belnap_both = counts[Belnap.BOTH]
    m.belnap_false = counts[Belnap.FALSE]
    m.belnap_none = counts[Belnap.NONE]
    return m


def evaluate(net: EddNetwork, split: DatasetSplit, kb: ConditionKB | None, policy: Policy | str = Policy.STRICT) -> ModelMetrics:
    """Evaluate on the class-derived test samples (free-attribute samples have no class)."""
    mask = split.test.class_mask
    x = split.test_normalized()[mask]
    y, z = predict_batch(net, x)
    return evaluate_predictions(
        net.plan.tag, y, z, split.test.class_ids[mask], split.test.attributes[mask],
        kb if net.plan.has_attributes else None, policy,
    )


@dataclass
class MetricsReport:
    rows: list[ModelMetrics]
    meta: dict = field(default_factory=dict)

    def row(self, model: str) -> ModelMetrics:
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(model)


def _cell(value) -> str:
    if value is None:
        return ABSENT
    if isinstance(value, str):
        return value
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(int(value))


def report_rows(report: MetricsReport) -> list[list[str]]:
    return [[_cell(getattr(r, c)) for c in REPORT_COLUMNS] for r in report.rows]


def format_text(report: MetricsReport) -> str:
    rows = [list(REPORT_COLUMNS)] + report_rows(report)
    widths = [max(len(r[i]) for r in rows) for i in range(len(REPORT_COLUMNS))]
    lines = []
    for j, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def format_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerows(report_rows(report))
    return buf.getvalue()


def format_json(report: MetricsReport) -> str:
    return json.dumps({"meta": report.meta, "models": [asdict(r) for r in report.rows]}, indent=2, sort_keys=True) + "\n"


def parse_csv(text: str) -> list[dict]:
    """Read a report CSV back; numeric cells become float/int, markers stay strings."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        rec = {}
        for k, v in row.items():
            if k == "model" or v in (ABSENT, UNDEFINED):
                rec[k] = v
            elif "." in v:
                rec[k] = float(v)
            else:
                rec[k] = int(v)
        out.append(rec)
    return out


_FORMATTERS = {"text": ("report.txt", format_text), "csv": ("report.csv", format_csv), "json": ("report.json", format_json)}


def emit_report(report: MetricsReport, out_dir, formats: Sequence[str] = ("text", "csv", "json")) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in formats:
        if f not in _FORMATTERS:
            raise ValueError(f"unknown report format {f!r}")
        name, fmt = _FORMATTERS[f]
        p = out / name
        p.write_text(fmt(report), encoding="utf-8")
        paths.append(p)
    return paths


def write_history(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def load_weights(net: EddNetwork, path) -> None:
    stored = ParameterStore.load(path)
    if list(stored) != list(net.params):
        raise WeightFileError(f"{path}: parameter names do not match a {net.plan.tag} network")
    for name in stored:
        if stored.partition(name) != net.params.partition(name):
            raise WeightFileError(f"{path}: partition of {name} differs")
    net.params.load_state(stored.state())


def train_models(config: ExperimentConfig, split: DatasetSplit, out_dir: Path | None = None) -> dict[str, tuple[EddNetwork, list[EpochRecord]]]:
    """Train each model in turn; wall-clock seconds go to ``timings.json``, outside the reports."""
    trained = {}
    timings = {}
    for tag in config.models:
        arch = arch_for(config, tag)
        net = build_network(plan_for(tag, split.schema), split.schema, split.num_classes, arch)
        log.info("training %s (%d parameters)", tag, net.parameter_count())
        t0 = time.perf_counter()
        history = train(net, split, arch)
        timings[tag] = round(time.perf_counter() - t0, 3)
        trained[tag] = (net, history)
        if out_dir is not None:
            (out_dir / "weights").mkdir(parents=True, exist_ok=True)
            (out_dir / "history").mkdir(parents=True, exist_ok=True)
            net.params.save(out_dir / "weights" / f"{tag}.eddw")
            write_history(history, out_dir / "history" / f"{tag}.jsonl")
    if out_dir is not None:
        (out_dir / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
    return trained


def run_experiment(config: ExperimentConfig, write: bool = True) -> MetricsReport:
    """Generate data, train and evaluate every configured model, persist artifacts."""
    out = Path(config.out_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    split = dataset_for(config)
    kb = kb_for(config, split)
    if write:
        kb.save(out / "kb.json")
    trained = train_models(config, split, out if write else None)
    rows = [evaluate(net, split, kb, config.reject_policy) for net, _ in trained.values()]
    report = MetricsReport(
        rows,
        meta={
            "seed": config.seed,
            "dataset_fingerprint": split.fingerprint(),
            "n_train": len(split.train),
            "n_test": len(split.test),
            "reject_policy": config.reject_policy,
            "parameters": {tag: net.parameter_count() for tag, (net, _) in trained.items()},
            "final_train_loss": {tag: round(h[-1].loss, 6) if h else None for tag, (_, h) in trained.items()},
        },
    )
    if write:
        emit_report(report, out, config.formats)
    return report


def check_report(report: MetricsReport) -> list[str]:
    """Count and range invariants of a report; returns violations."""
    problems = []
    for r in report.rows:
        for name in ("acc_y", "acc_z", "acc_z_strict", "acc_y_reject", "rejection_rate"):
            v = getattr(r, name)
            if isinstance(v, float) and not (0.0 <= v <= 100.0 and math.isfinite(v)):
                problems.append(f"{r.model}: {name}={v} outside [0, 100]")
        if r.n_accepted is not None:
            if not 0 <= r.n_accepted <= r.n_test:
                problems.append(f"{r.model}: accepted count {r.n_accepted} outside [0, {r.n_test}]")
            total = r.belnap_true + r.belnap_both + r.belnap_false + r.belnap_none
            if total != r.n_test:
                problems.append(f"{r.model}: Belnap counts sum to {total}, expected {r.n_test}")
            if r.belnap_true != r.n_accepted and report.meta.get("reject_policy", "strict") == "strict":
                problems.append(f"{r.model}: {r.belnap_true} True but {r.n_accepted} accepted")
            if abs(r.rejection_rate - round(100.0 * r.n_rejected / r.n_test, 2)) > 1e-9:
                problems.append(f"{r.model}: rejection rate disagrees with counts")
    return problems
