"""EDD networks: a shared conv backbone with depth-ordered taps and one softmax head per variable.

Each head is a single dense layer over its tap features concatenated with the
distributions of its parent variables (as given by the factorization plan).
During teacher forcing the parent slots receive ground-truth one-hots instead.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import core as C
from .core import CLASS_HEAD, FEATURE, ParameterStore, Tensor, attribute_head, glorot_uniform
from .data import AttributeSchema, DatasetSplit, SampleSet, onehot
from .graph import (
    CLASS_VAR,
    FactorizationPlan,
    PlanError,
    factor_losses,
    topological_head_order,
    validate,
    zindex,
    zvar,
)

log = logging.getLogger(__name__)

TIER_ORDER = ("simple", "medium", "complex")


class Mode(enum.Enum):
    FREE = "free"
    TEACHER_FORCED = "teacher_forced"


class ArchitectureError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, model: str, epoch: int, step: int, value: float):
        self.model, self.epoch, self.step, self.value = model, epoch, step, value
        super().__init__(f"{model}: loss became non-finite ({value}) at epoch {epoch}, step {step}")


@dataclass
class ArchitectureConfig:
    # (out_channels, kernel, stride) per conv layer
    conv: tuple[tuple[int, int, int], ...] = ((8, 3, 1), (16, 3, 2), (24, 3, 1), (32, 3, 2))
    # 1-based conv layer read by the heads of each complexity tier
    taps: dict = field(default_factory=lambda: {"simple": 2, "medium": 3, "complex": 4})
    # max-pool applied to each conv layer's output before it feeds a head
    tap_pool: tuple[int, ...] = (1, 2, 2, 1)
    class_hidden: tuple[int, ...] = (64,)
    image_size: int = 32
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.01
    lr_schedule: str = "cosine"  # "constant" | "cosine" (per-epoch decay towards 0)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    teacher_forcing_epochs: int | None = None  # None: 30% of epochs
    seed: int = 0

    def __post_init__(self):
        self.conv = tuple(tuple(int(v) for v in c) for c in self.conv)
        self.tap_pool = tuple(int(p) for p in self.tap_pool)
        self.class_hidden = tuple(int(h) for h in self.class_hidden)
        if len(self.tap_pool) != len(self.conv):
            raise ArchitectureError("tap_pool needs one entry per conv layer")
        for tier, idx in self.taps.items():
            if tier not in TIER_ORDER:
                raise ArchitectureError(f"unknown tier {tier!r}")
            if not 1 <= idx <= len(self.conv):
                raise ArchitectureError(f"tap for {tier} at conv {idx}, but there are {len(self.conv)} conv layers")
        depths = [self.taps[t] for t in TIER_ORDER if t in self.taps]
        if depths != sorted(depths):
            raise ArchitectureError(f"tap depth must not decrease with tier complexity: {self.taps}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ArchitectureError("epochs and batch_size must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ArchitectureError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.teacher_forcing_epochs is not None and not 0 <= self.teacher_forcing_epochs <= self.epochs:
            raise ArchitectureError("teacher_forcing_epochs must lie in [0, epochs]")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch."""
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.lr
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / self.epochs))

    @property
    def forced_epochs(self) -> int:
        if self.teacher_forcing_epochs is not None:
            return self.teacher_forcing_epochs
        return int(round(0.3 * self.epochs))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [list(c) for c in self.conv]
        d["tap_pool"] = list(self.tap_pool)
        d["class_hidden"] = list(self.class_hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ArchitectureConfig":
        kw = dict(d)
        if "conv" in kw:
            kw["conv"] = tuple(tuple(c) for c in kw["conv"])
        return cls(**kw)


@dataclass(frozen=True)
class HeadSpec:
    var: str
    tap: int  # 1-based conv layer; 0 means the class dense stack
    tap_width: int
    parents: tuple[str, ...]
    parent_widths: tuple[int, ...]
    out_width: int

    @property
    def in_width(self) -> int:
        return self.tap_width + sum(self.parent_widths)


def _conv_out(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


class EddNetwork:
    def __init__(self, plan, schema, num_classes, arch, params, heads, dtype):
        self.plan: FactorizationPlan = plan
        self.schema: AttributeSchema = schema
        self.num_classes: int = num_classes
        self.arch: ArchitectureConfig = arch
        self.params: ParameterStore = params
        self.heads: dict[str, HeadSpec] = heads
        self.dtype = dtype
        self.order = topological_head_order(plan)

    def cardinality(self, var: str) -> int:
        return self.num_classes if var == CLASS_VAR else self.schema.sizes[zindex(var) - 1]

    def realized_edges(self) -> set[tuple[str, str]]:
        return {(p, h.var) for h in self.heads.values() for p in h.parents}

    def parameter_count(self) -> int:
        return self.params.count()

    def astype(self, dtype) -> "EddNetwork":
        return EddNetwork(self.plan, self.schema, self.num_classes, self.arch, self.params.astype(dtype),
                          self.heads, dtype)

    def summary(self) -> str:
        lines = [f"{self.plan.tag}: {self.parameter_count()} parameters"]
        for v in self.order:
            h = self.heads[v]
            src = "class stack" if h.tap == 0 else f"conv{h.tap}"
            pa = f" + {','.join(h.parents)}" if h.parents else ""
            lines.append(f"  {v}: {src}[{h.tap_width}]{pa} -> {h.out_width}")
        return "\n".join(lines)


def build_network(
    plan: FactorizationPlan,
    schema: AttributeSchema,
    num_classes: int,
    arch: ArchitectureConfig | None = None,
    dtype=np.float32,
) -> EddNetwork:
    arch = arch or ArchitectureConfig()
    problems = validate(plan)
    if problems:
        raise PlanError(f"invalid plan {plan.tag}: {'; '.join(problems)}")
    if plan.num_attributes not in (0, len(schema.groups)):
        raise ArchitectureError(f"plan has {plan.num_attributes} attributes, schema has {len(schema.groups)}")
    for v in plan.attribute_vars:
        tier = schema.groups[zindex(v) - 1].tier
        if tier not in arch.taps:
            raise ArchitectureError(f"no tap configured for tier {tier!r} ({v})")

    rng = np.random.default_rng(arch.seed)
    params = ParameterStore()
    tap_widths: dict[int, int] = {}
    ch, size = 3, arch.image_size
    for i, (out_ch, k, s) in enumerate(arch.conv, start=1):
        if k > size:
            raise ArchitectureError(f"conv{i} kernel {k} exceeds feature size {size}")
        params.add(f"conv{i}.w", glorot_uniform((out_ch, ch, k, k), ch * k * k, out_ch * k * k, rng, dtype), FEATURE)
        params.add(f"conv{i}.b", np.zeros(out_ch, dtype), FEATURE)
        size = _conv_out(size, k, s)
        ch = out_ch
        pool = arch.tap_pool[i - 1]
        tap_widths[i] = ch * (size // pool) ** 2
    width = ch * size * size

    cards = {CLASS_VAR: num_classes}
    for k_, n in enumerate(schema.sizes, start=1):
        cards[zvar(k_)] = n

    heads: dict[str, HeadSpec] = {}
    for v in topological_head_order(plan):
        pa = plan.parents(v)
        pw = tuple(cards[p] for p in pa)
        if v == CLASS_VAR:
            w_in = width
            for j, hdim in enumerate(arch.class_hidden, start=1):
                params.add(f"y.fc{j}.w", glorot_uniform((w_in, hdim), w_in, hdim, rng, dtype), CLASS_HEAD)
                params.add(f"y.fc{j}.b", np.zeros(hdim, dtype), CLASS_HEAD)
                w_in = hdim
            spec = HeadSpec(v, 0, w_in, pa, pw, num_classes)
            part = CLASS_HEAD
        else:
            k_ = zindex(v)
            tap = arch.taps[schema.groups[k_ - 1].tier]
            spec = HeadSpec(v, tap, tap_widths[tap], pa, pw, cards[v])
            part = attribute_head(k_)
        params.add(f"{v}.w", glorot_uniform((spec.in_width, spec.out_width), spec.in_width, spec.out_width, rng, dtype), part)
        params.add(f"{v}.b", np.zeros(spec.out_width, dtype), part)
        heads[v] = spec
    return EddNetwork(plan, schema, num_classes, arch, params, heads, dtype)


class HeadOutputs(dict):
    """Softmax output tensor per variable name."""

    @property
    def y(self) -> Tensor:
        return self[CLASS_VAR]

    def z(self, k: int) -> Tensor:
        return self[zvar(k)]

    def numpy(self) -> dict[str, np.ndarray]:
        return {v: t.data for v, t in self.items()}


def backbone(net: EddNetwork, images) -> dict[int, Tensor]:
    """Flattened tap features per conv layer (1-based) plus 0 for the class stack."""
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=net.dtype))
    p = net.params
    needed = {h.tap for h in net.heads.values()}
    feats: dict[int, Tensor] = {}
    for i, (_, _, s) in enumerate(net.arch.conv, start=1):
        x = C.relu(C.conv2d(x, p[f"conv{i}.w"], p[f"conv{i}.b"], stride=s))
        if i in needed:
            pool = net.arch.tap_pool[i - 1]
            feats[i] = C.flatten(C.max_pool2d(x, pool) if pool > 1 else x)
    if CLASS_VAR in net.heads:
        h = C.flatten(x)
        for j in range(1, len(net.arch.class_hidden) + 1):
            h = C.relu(C.dense(h, p[f"y.fc{j}.w"], p[f"y.fc{j}.b"]))
        feats[0] = h
    return feats


def head_forward(net: EddNetwork, var: str, feats: Mapping[int, Tensor], parent_inputs: Sequence[Tensor]) -> Tensor:
    spec = net.heads[var]
    x = C.concat([feats[spec.tap], *parent_inputs], axis=1) if parent_inputs else feats[spec.tap]
    return C.softmax(C.dense(x, net.params[f"{var}.w"], net.params[f"{var}.b"]))


def forward(
    net: EddNetwork,
    images,
    mode: Mode | str = Mode.FREE,
    labels: Mapping[str, np.ndarray] | None = None,
) -> HeadOutputs:
    """Evaluate all heads in topological order.

    In teacher-forced mode ``labels`` maps each parent variable to one-hot
    rows; an all-zero row (a sample without that label, e.g. the class of a
    free-attribute sample) falls back to the parent's own prediction.
    """
    mode = Mode(mode)
    if mode is Mode.TEACHER_FORCED:
        if labels is None:
            raise ValueError("teacher-forced forward pass needs labels")
        missing = {p for h in net.heads.values() for p in h.parents} - set(labels)
        if missing:
            raise ValueError(f"teacher forcing needs labels for {sorted(missing)}")
    feats = backbone(net, images)
    outs = HeadOutputs()
    for v in net.order:
        inputs = []
        for p in net.heads[v].parents:
            pred = outs[p]
            if mode is Mode.TEACHER_FORCED:
                truth = np.asarray(labels[p], dtype=net.dtype)
                if truth.shape != pred.shape:
                    raise C.ShapeError("teacher forcing", truth.shape, pred.shape)
                have = truth.sum(axis=1) > 0
                inputs.append(C.select_rows(have, Tensor(truth, dtype=net.dtype), pred))
            else:
                inputs.append(pred)
        outs[v] = head_forward(net, v, feats, inputs)
    return outs


def batch_labels(net: EddNetwork, samples: SampleSet, idx=None) -> tuple[dict[str, np.ndarray], np.ndarray]:
    s = samples if idx is None else samples.subset(idx)
    labels = {CLASS_VAR: onehot(s.class_ids, net.num_classes, net.dtype)}
    for k, n in enumerate(net.schema.sizes, start=1):
        labels[zvar(k)] = onehot(s.attributes[:, k - 1], n, net.dtype)
    return labels, s.class_mask


def loss_terms(net, images, labels, class_mask, mode=Mode.FREE, reduction="mean") -> dict[str, Tensor]:
    outs = forward(net, images, mode, labels)
    return factor_losses(outs, labels, net.plan, class_mask, reduction)


@dataclass
class Prediction:
    class_index: int
    attributes: tuple[int, ...]
    outputs: dict[str, np.ndarray]


def predict(net: EddNetwork, image) -> Prediction:
    """Greedy decode of one (normalized) image: argmax of every head in a free forward pass."""
    x = np.asarray(image, dtype=net.dtype)
    if x.ndim == 3:
        x = x[None]
    outs = forward(net, x, Mode.FREE).numpy()
    out = {v: o[0] for v, o in outs.items()}
    attrs = tuple(int(np.argmax(out[v])) for v in net.plan.attribute_vars)
    return Prediction(int(np.argmax(out[CLASS_VAR])), attrs, out)


def predict_batch(net: EddNetwork, images: np.ndarray, batch_size: int = 250) -> tuple[np.ndarray, np.ndarray | None]:
    """Class indices ``[N]`` and attribute indices ``[N, e]`` (None for class-only plans)."""
    ys, zs = [], []
    for start in range(0, len(images), batch_size):
        outs = forward(net, images[start : start + batch_size], Mode.FREE).numpy()
        ys.append(outs[CLASS_VAR].argmax(axis=1))
        if net.plan.has_attributes:
            zs.append(np.stack([outs[v].argmax(axis=1) for v in net.plan.attribute_vars], axis=1))
    y = np.concatenate(ys) if ys else np.zeros(0, dtype=np.int64)
    z = np.concatenate(zs) if zs else None
    return y, z


def network_conditional(net: EddNetwork, image) -> Callable[[str, Mapping[str, int]], np.ndarray]:
    """``p(v | parents = given values, x)`` for one image, parents fed as one-hots."""
    x = np.asarray(image, dtype=net.dtype)
    if x.ndim == 3:
        x = x[None]
    feats = backbone(net, x)
    cache: dict[tuple, np.ndarray] = {}

    def cond(var: str, parent_values: Mapping[str, int]) -> np.ndarray:
        key = (var,) + tuple(parent_values[p] for p in net.heads[var].parents)
        if key not in cache:
            ins = []
            for p in net.heads[var].parents:
                oh = np.zeros((1, net.cardinality(p)), dtype=net.dtype)
                oh[0, parent_values[p]] = 1
                ins.append(Tensor(oh, dtype=net.dtype))
            cache[key] = head_forward(net, var, feats, ins).data[0].astype(np.float64)
        return cache[key]

    return cond


@dataclass
class EpochRecord:
    epoch: int
    mode: str
    loss: float
    lr: float | None = None
    test_acc_y: float | None = None
    test_acc_z: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy_z(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean over attribute groups of per-group accuracy, in percent."""
    return float(100.0 * np.mean([(pred[:, k] == truth[:, k]).mean() for k in range(truth.shape[1])]))


def train(
    net: EddNetwork,
    split: DatasetSplit,
    arch: ArchitectureConfig | None = None,
    class_loss: bool = True,
    eval_every_epoch: bool = True,
    max_steps: int | None = None,
) -> list[EpochRecord]:
    """Minibatch SGD on the joint NLL; the first ``forced_epochs`` epochs use teacher forcing.

    ``class_loss=False`` drops the class factor entirely (used to check that
    attribute heads do not receive class gradients under full independence).
    """
    arch = arch or net.arch
    if arch.forced_epochs > arch.epochs:
        raise ArchitectureError("teacher-forcing epochs exceed total epochs")
    rng = np.random.default_rng(np.random.SeedSequence([arch.seed, 7]))
    opt = C.OptimizerState(lr=arch.lr, weight_decay=arch.weight_decay, momentum=arch.momentum)
    x_train = split.train_normalized().astype(net.dtype)
    x_test = split.test_normalized().astype(net.dtype) if eval_every_epoch else None
    n = len(split.train)
    uses_forcing = net.plan.teacher_forcing and bool(net.realized_edges())
    history: list[EpochRecord] = []
    steps = 0
    net.params.zero_grad()
    for epoch in range(1, arch.epochs + 1):
        mode = Mode.TEACHER_FORCED if uses_forcing and epoch <= arch.forced_epochs else Mode.FREE
        opt.lr = arch.lr_at(epoch)
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, arch.batch_size):
            idx = order[start : start + arch.batch_size]
            labels, mask = batch_labels(net, split.train, idx)
            if not class_loss:
                mask = np.zeros_like(mask)
            terms = loss_terms(net, x_train[idx], labels, mask, mode)
            loss = C.add_n([terms[v] for v in net.plan.variables])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergedError(net.plan.tag, epoch, steps, value)
            C.backward(loss)
            C.sgd_step(net.params, opt)
            total += value * len(idx)
            count += len(idx)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        rec = EpochRecord(epoch, mode.value, total / max(count, 1), opt.lr)
        if eval_every_epoch and len(split.test):
            y, z = predict_batch(net, x_test)
            m = split.test.class_mask
            rec.test_acc_y = float(100.0 * (y[m] == split.test.class_ids[m]).mean()) if m.any() else None
            if z is not None:
                rec.test_acc_z = accuracy_z(z, split.test.attributes)
        log.info("%s epoch %d [%s] loss %.4f acc_y %s acc_z %s", net.plan.tag, epoch, rec.mode, rec.loss,
                 rec.test_acc_y, rec.test_acc_z)
        history.append(rec)
        if max_steps is not None and steps >= max_steps:
            break
    return history
