"""Synthetic traffic-sign-like images with ground-truth class and attribute labels.

Signs are flat-colour convex shapes with an optional border ring and a
procedural glyph, rendered at 2x and box-filtered down, over a noisy
background. A configurable fraction of the training set consists of
"free-attribute" signs whose attribute values are drawn independently; these
carry no class (class id ``-1``) and only supervise attribute heads.

Dataset file layout (little-endian)::

    b"EDDD"  u32 version  u32 manifest_len  manifest (utf-8 JSON)
    image block: f32[n_total, 3, H, W]   train samples first, then test
    label block: u16[n_total, 1 + e]     class id (0xFFFF = no class), then one value index per group
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

DATASET_MAGIC = b"EDDD"
DATASET_FORMAT_VERSION = 1
NO_CLASS = -1
_NO_CLASS_U16 = 0xFFFF

TIERS = ("simple", "medium", "complex")

# reference RGB colours; the renderer jitters around these
PALETTE: dict[str, tuple[float, float, float]] = {
    "white": (0.95, 0.95, 0.95),
    "red": (0.80, 0.08, 0.10),
    "blue": (0.10, 0.25, 0.75),
    "yellow": (0.98, 0.80, 0.05),
    "black": (0.08, 0.08, 0.08),
}


class DatasetError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeGroup:
    name: str
    values: tuple[str, ...]
    tier: str

    def index(self, value: str) -> int:
        try:
            return self.values.index(value)
        except ValueError:
            raise SchemaError(f"unknown value {value!r} for attribute group {self.name!r}") from None


@dataclass(frozen=True)
class AttributeSchema:
    groups: tuple[AttributeGroup, ...]

    def __post_init__(self):
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate group names in {names}")
        for g in self.groups:
            if len(g.values) < 2:
                raise SchemaError(f"group {g.name!r} needs at least two values")
            if len(set(g.values)) != len(g.values):
                raise SchemaError(f"group {g.name!r} has duplicate values")
            if g.tier not in TIERS:
                raise SchemaError(f"group {g.name!r} has unknown tier {g.tier!r}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g.values) for g in self.groups)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    def group(self, name: str) -> AttributeGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise SchemaError(f"no attribute group {name!r}")

    def encode(self, assignment: Mapping[str, str] | Sequence[str]) -> tuple[int, ...]:
        """Value names (by group name or in group order) -> value indices."""
        if isinstance(assignment, Mapping):
            missing = [g.name for g in self.groups if g.name not in assignment]
            if missing:
                raise SchemaError(f"assignment lacks groups {missing}")
            values = [assignment[g.name] for g in self.groups]
        else:
            values = list(assignment)
            if len(values) != len(self.groups):
                raise SchemaError(f"expected {len(self.groups)} values, got {len(values)}")
        return tuple(g.index(v) for g, v in zip(self.groups, values))

    def decode(self, indices: Sequence[int]) -> tuple[str, ...]:
        return tuple(g.values[int(i)] for g, i in zip(self.groups, indices))

    def to_dict(self) -> dict:
        return {"groups": [{"name": g.name, "values": list(g.values), "tier": g.tier} for g in self.groups]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttributeSchema":
        return cls(tuple(AttributeGroup(g["name"], tuple(g["values"]), g["tier"]) for g in d["groups"]))


def default_schema() -> AttributeSchema:
    return AttributeSchema(
        (
            AttributeGroup("main_color", ("white", "red", "blue", "yellow"), "simple"),
            AttributeGroup("border_color", ("red", "blue", "black", "none"), "simple"),
            AttributeGroup("shape", ("circle", "triangle", "square", "octagon"), "medium"),
            AttributeGroup("symbol", ("none", "bar", "dot", "cross", "chevron", "digit8", "digit0"), "complex"),
        )
    )


@dataclass(frozen=True)
class SignClass:
    id: int
    name: str
    assignment: tuple[str, ...]  # one value per group, in schema order


def default_classes(schema: AttributeSchema | None = None) -> list[SignClass]:
    schema = schema or default_schema()
    rows = [
        ("stop", ("red", "none", "octagon", "bar")),
        ("no_entry", ("red", "none", "circle", "bar")),
        ("priority_road", ("yellow", "none", "square", "none")),
        ("speed_limit_80", ("white", "red", "circle", "digit8")),
        ("end_speed_limit_80", ("white", "black", "circle", "digit8")),
        ("minimum_speed_80", ("blue", "none", "circle", "digit8")),
        ("keep_right", ("white", "blue", "circle", "chevron")),
        ("caution", ("white", "red", "triangle", "dot")),
    ]
    classes = [SignClass(i, name, values) for i, (name, values) in enumerate(rows)]
    validate_classes(schema, classes)
    return classes


def validate_classes(schema: AttributeSchema, classes: Sequence[SignClass]) -> None:
    seen: dict[tuple[int, ...], str] = {}
    for i, c in enumerate(classes):
        if c.id != i:
            raise SchemaError(f"class ids must be 0..n-1 in order; {c.name} has id {c.id}")
        key = schema.encode(c.assignment)
        if key in seen:
            raise SchemaError(f"classes {seen[key]!r} and {c.name!r} have identical attributes")
        seen[key] = c.name


def classes_to_dict(classes: Sequence[SignClass]) -> list[dict]:
    return [{"id": c.id, "name": c.name, "assignment": list(c.assignment)} for c in classes]


def classes_from_dict(rows: Sequence[Mapping]) -> list[SignClass]:
    return [SignClass(int(r["id"]), r["name"], tuple(r["assignment"])) for r in rows]


# -- rendering ---------------------------------------------------------------

_SUPERSAMPLE = 2
_BORDER_INNER = 0.72


def _polygon_mask(u: np.ndarray, v: np.ndarray, sides: int, phase: float) -> np.ndarray:
    """Inside test for a regular polygon of circumradius 1 centred at the origin."""
    inside = np.ones(u.shape, dtype=bool)
    apothem = np.cos(np.pi / sides)
    for i in range(sides):
        a = phase + (i + 0.5) * 2 * np.pi / sides  # edge-normal direction
        inside &= u * np.cos(a) + v * np.sin(a) <= apothem
    return inside


def _shape_mask(shape: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    if shape == "circle":
        return u * u + v * v <= 1.0
    if shape == "triangle":
        # apex down; scaled so its area is closer to the other shapes
        return _polygon_mask(u / 1.2, (v - 0.15) / 1.2, 3, -np.pi / 2 - np.pi / 3)
    if shape == "square":
        return (np.abs(u) <= 0.88) & (np.abs(v) <= 0.88)
    if shape == "octagon":
        # flat top edge; corners reach past the unit circle so it reads as non-round
        return _polygon_mask(u / 1.18, v / 1.18, 8, -np.pi / 8)
    raise SchemaError(f"unknown shape {shape!r}")


def _segment_dist(u, v, a, b):
    (ax, ay), (bx, by) = a, b
    dx, dy = bx - ax, by - ay
    t = np.clip(((u - ax) * dx + (v - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return np.hypot(u - (ax + t * dx), v - (ay + t * dy))


def _seven_segment(u, v, segments: str, w: float = 0.32, h: float = 0.58, t: float = 0.11):
    pts = {
        "a": ((-w, -h), (w, -h)),
        "d": ((-w, h), (w, h)),
        "g": ((-w, 0.0), (w, 0.0)),
        "f": ((-w, -h), (-w, 0.0)),
        "b": ((w, -h), (w, 0.0)),
        "e": ((-w, 0.0), (-w, h)),
        "c": ((w, 0.0), (w, h)),
    }
    m = np.zeros(u.shape, dtype=bool)
    for s in segments:
        m |= _segment_dist(u, v, *pts[s]) <= t
    return m


def _glyph_mask(symbol: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    if symbol == "none":
        return np.zeros(u.shape, dtype=bool)
    if symbol == "bar":
        return (np.abs(u) <= 0.62) & (np.abs(v) <= 0.15)
    if symbol == "dot":
        return u * u + v * v <= 0.3**2
    if symbol == "cross":
        return ((np.abs(u) <= 0.13) & (np.abs(v) <= 0.58)) | ((np.abs(v) <= 0.13) & (np.abs(u) <= 0.58))
    if symbol == "chevron":
        return (_segment_dist(u, v, (-0.45, 0.25), (0.0, -0.25)) <= 0.13) | (
            _segment_dist(u, v, (0.0, -0.25), (0.45, 0.25)) <= 0.13
        )
    if symbol == "digit8":
        return _seven_segment(u, v, "abcdefg")
    if symbol == "digit0":
        return _seven_segment(u, v, "abcdef")
    raise SchemaError(f"unknown symbol {symbol!r}")


def _jitter_color(name: str, rng: np.random.Generator, amount: float) -> np.ndarray:
    return np.clip(np.asarray(PALETTE[name]) + rng.normal(0.0, amount, 3), 0.0, 1.0)


def render_sign(
    assignment: Mapping[str, str] | Sequence[str],
    rng: np.random.Generator | int,
    schema: AttributeSchema | None = None,
    size: int = 32,
    return_mask: bool = False,
):
    """Render one sign as a float32 ``[3, size, size]`` image in ``[0, 1]``.

    Nuisance parameters (background, position, scale, rotation, colour and
    brightness jitter, pixel noise) are all drawn from ``rng``. With
    ``return_mask`` the boolean interior mask (pixels of the main-colour
    region, glyph included) is returned as well.
    """
    schema = schema or default_schema()
    values = dict(zip(schema.names, schema.decode(schema.encode(assignment))))
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    main = values.get("main_color", "white")
    border = values.get("border_color", "none")
    shape = values.get("shape", "circle")
    symbol = values.get("symbol", "none")

    S = size * _SUPERSAMPLE
    coords = (np.arange(S) + 0.5) / _SUPERSAMPLE
    py, px = np.meshgrid(coords, coords, indexing="ij")

    # nuisance parameters, always drawn in the same order
    bg_base = rng.uniform(0.15, 0.65, 3)
    bg_grad = rng.normal(0.0, 0.12, 3)
    cx = size / 2 + rng.uniform(-2.5, 2.5)
    cy = size / 2 + rng.uniform(-2.5, 2.5)
    radius = size * rng.uniform(0.34, 0.45)
    angle = rng.uniform(-0.15, 0.15)
    brightness = rng.uniform(0.75, 1.15)
    main_rgb = _jitter_color(main, rng, 0.04)
    border_rgb = _jitter_color(border, rng, 0.04) if border != "none" else None
    glyph_rgb = np.asarray(PALETTE["black"] if main in ("white", "yellow") else PALETTE["white"])
    glyph_rgb = np.clip(glyph_rgb + rng.normal(0.0, 0.03, 3), 0.0, 1.0)
    noise_sigma = rng.uniform(0.02, 0.06)

    ca, sa = np.cos(angle), np.sin(angle)
    du, dv = (px - cx) / radius, (py - cy) / radius
    u = ca * du + sa * dv
    v = -sa * du + ca * dv

    img = bg_base[:, None, None] + bg_grad[:, None, None] * ((px + py) / S - 0.5)[None]
    outer = _shape_mask(shape, u, v)
    if border_rgb is not None:
        inner = _shape_mask(shape, u / _BORDER_INNER, v / _BORDER_INNER)
        glyph_scale = _BORDER_INNER
    else:
        inner = outer
        glyph_scale = 0.9
    if shape == "triangle":
        gu, gv, glyph_scale = u, v - 0.2, glyph_scale * 0.6
    else:
        gu, gv = u, v
    glyph = _glyph_mask(symbol, gu / glyph_scale, gv / glyph_scale) & inner

    if border_rgb is not None:
        img = np.where(outer[None], border_rgb[:, None, None], img)
    img = np.where(inner[None], main_rgb[:, None, None], img)
    img = np.where(glyph[None], glyph_rgb[:, None, None], img)
    img = img * np.where(outer, brightness, 1.0)[None]

    img = img.reshape(3, size, _SUPERSAMPLE, size, _SUPERSAMPLE).mean(axis=(2, 4))
    img = img + rng.normal(0.0, noise_sigma, img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    if return_mask:
        mask = inner.reshape(size, _SUPERSAMPLE, size, _SUPERSAMPLE).mean(axis=(1, 3)) > 0.5
        return img, mask
    return img


# -- datasets ------------------------------------------------------------------


@dataclass
class Sample:
    image: np.ndarray  # [3, H, W] in [0, 1]
    class_id: int  # NO_CLASS for free-attribute samples
    attributes: tuple[int, ...]
    num_classes: int
    group_sizes: tuple[int, ...]

    @property
    def has_class(self) -> bool:
        return self.class_id != NO_CLASS

    @property
    def class_onehot(self) -> np.ndarray | None:
        if not self.has_class:
            return None
        out = np.zeros(self.num_classes, dtype=np.float32)
        out[self.class_id] = 1
        return out

    @property
    def attribute_onehots(self) -> list[np.ndarray]:
        outs = []
        for a, n in zip(self.attributes, self.group_sizes):
            o = np.zeros(n, dtype=np.float32)
            o[a] = 1
            outs.append(o)
        return outs


@dataclass
class SampleSet:
    images: np.ndarray  # float32 [N, 3, H, W], unnormalized
    class_ids: np.ndarray  # int64 [N], NO_CLASS for free-attribute samples
    attributes: np.ndarray  # int64 [N, e]

    def __len__(self) -> int:
        return len(self.class_ids)

    @property
    def class_mask(self) -> np.ndarray:
        return self.class_ids != NO_CLASS

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.images[idx], self.class_ids[idx], self.attributes[idx])


def onehot(indices: np.ndarray, n: int, dtype=np.float32) -> np.ndarray:
    """One-hot rows; negative indices (no label) become all-zero rows."""
    idx = np.asarray(indices)
    out = np.zeros((len(idx), n), dtype=dtype)
    ok = idx >= 0
    out[np.nonzero(ok)[0], idx[ok]] = 1
    return out


@dataclass
class DatasetConfig:
    n_train: int = 2000
    n_test: int = 500
    free_attr_fraction: float = 0.39
    seed: int = 0
    image_size: int = 32

    def __post_init__(self):
        if self.n_train <= 0 or self.n_test <= 0:
            raise DatasetError("n_train and n_test must be positive")
        if not 0.0 <= self.free_attr_fraction < 1.0:
            raise DatasetError("free_attr_fraction must be in [0, 1)")


@dataclass
class DatasetSplit:
    schema: AttributeSchema
    classes: list[SignClass]
    train: SampleSet
    test: SampleSet
    mean: np.ndarray  # per channel, from train images
    std: np.ndarray
    free_attr_fraction: float
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def normalize(self, images: np.ndarray) -> np.ndarray:
        return ((images - self.mean[None, :, None, None]) / self.std[None, :, None, None]).astype(np.float32)

    def train_normalized(self) -> np.ndarray:
        return self.normalize(self.train.images)

    def test_normalized(self) -> np.ndarray:
        return self.normalize(self.test.images)

    def sample(self, which: str, i: int) -> Sample:
        s = self.train if which == "train" else self.test
        return Sample(s.images[i], int(s.class_ids[i]), tuple(int(a) for a in s.attributes[i]),
                      self.num_classes, self.schema.sizes)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for s in (self.train, self.test):
            h.update(s.images.tobytes())
            h.update(s.class_ids.astype("<i8").tobytes())
            h.update(s.attributes.astype("<i8").tobytes())
        return h.hexdigest()


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = images.astype(np.float64)
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    return mean.astype(np.float32), np.maximum(std, 1e-6).astype(np.float32)


def _sample_rng(seed: int, split: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, split, index]))


def _balanced_labels(n: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    return labels


def build_dataset(
    schema: AttributeSchema | None = None,
    classes: Sequence[SignClass] | None = None,
    config: DatasetConfig | None = None,
) -> DatasetSplit:
    """Render a train/test split.

    Class-derived samples are balanced across classes. Free-attribute samples
    make up ``free_attr_fraction`` of the training split only; the test split
    is entirely class-derived.
    """
    schema = schema or default_schema()
    classes = list(classes) if classes is not None else default_classes(schema)
    config = config or DatasetConfig()
    validate_classes(schema, classes)
    class_codes = [schema.encode(c.assignment) for c in classes]
    n_free = int(round(config.free_attr_fraction * config.n_train))
    n_cls_train = config.n_train - n_free

    def make(split: int, n: int, n_free_here: int) -> SampleSet:
        order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, split, 2**31]))
        cls_labels = _balanced_labels(n - n_free_here, len(classes), order_rng)
        kinds = np.concatenate([cls_labels, np.full(n_free_here, NO_CLASS)])
        order_rng.shuffle(kinds)
        images = np.empty((n, 3, config.image_size, config.image_size), dtype=np.float32)
        attrs = np.empty((n, len(schema.groups)), dtype=np.int64)
        for i, c in enumerate(kinds):
            rng = _sample_rng(config.seed, split, i)
            if c == NO_CLASS:
                code = tuple(int(rng.integers(s)) for s in schema.sizes)
            else:
                code = class_codes[c]
            attrs[i] = code
            images[i] = render_sign(schema.decode(code), rng, schema, config.image_size)
        return SampleSet(images, kinds.astype(np.int64), attrs)

    train = make(0, config.n_train, n_free)
    test = make(1, config.n_test, 0)
    mean, std = channel_stats(train.images)
    return DatasetSplit(schema, classes, train, test, mean, std, config.free_attr_fraction, config.seed,
                        meta={"n_free_train": n_free, "n_class_train": n_cls_train})


def save_dataset(split: DatasetSplit, path) -> None:
    e = len(split.schema.groups)
    H, W = split.train.images.shape[2:]
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "schema": split.schema.to_dict(),
        "classes": classes_to_dict(split.classes),
        "stats": {"mean": [float(m) for m in split.mean], "std": [float(s) for s in split.std]},
        "counts": {"train": len(split.train), "test": len(split.test)},
        "image_shape": [3, int(H), int(W)],
        "free_attr_fraction": split.free_attr_fraction,
        "seed": split.seed,
        "meta": split.meta,
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    images = np.concatenate([split.train.images, split.test.images]).astype("<f4")
    cls = np.concatenate([split.train.class_ids, split.test.class_ids])
    attrs = np.concatenate([split.train.attributes, split.test.attributes])
    labels = np.empty((len(cls), 1 + e), dtype="<u2")
    labels[:, 0] = np.where(cls == NO_CLASS, _NO_CLASS_U16, cls)
    labels[:, 1:] = attrs
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", DATASET_FORMAT_VERSION, len(mbytes)))
        fh.write(mbytes)
        fh.write(images.tobytes())
        fh.write(labels.tobytes())


def load_dataset(path) -> DatasetSplit:
    buf = Path(path).read_bytes()
    if len(buf) < 12:
        raise DatasetError("truncated dataset file: header incomplete")
    if buf[:4] != DATASET_MAGIC:
        raise DatasetError(f"bad magic {buf[:4]!r}: not an EDD dataset file")
    version, mlen = struct.unpack("<II", buf[4:12])
    if version != DATASET_FORMAT_VERSION:
        raise DatasetError(f"dataset format version {version} unsupported (expected {DATASET_FORMAT_VERSION})")
    if len(buf) < 12 + mlen:
        raise DatasetError("truncated dataset file: manifest incomplete")
    try:
        manifest = json.loads(buf[12 : 12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"corrupt manifest: {exc}") from None
    if manifest.get("format_version") != version:
        raise DatasetError("manifest version disagrees with header")
    schema = AttributeSchema.from_dict(manifest["schema"])
    classes = classes_from_dict(manifest["classes"])
    n_train, n_test = manifest["counts"]["train"], manifest["counts"]["test"]
    n = n_train + n_test
    shape = tuple(manifest["image_shape"])
    e = len(schema.groups)
    img_bytes = n * int(np.prod(shape)) * 4
    lab_bytes = n * (1 + e) * 2
    start = 12 + mlen
    if len(buf) != start + img_bytes + lab_bytes:
        raise DatasetError(
            f"truncated or oversized dataset file: {len(buf) - start} data bytes, expected {img_bytes + lab_bytes}"
        )
    images = np.frombuffer(buf, dtype="<f4", count=n * int(np.prod(shape)), offset=start).reshape((n,) + shape)
    labels = np.frombuffer(buf, dtype="<u2", count=n * (1 + e), offset=start + img_bytes).reshape(n, 1 + e)
    cls = labels[:, 0].astype(np.int64)
    cls[labels[:, 0] == _NO_CLASS_U16] = NO_CLASS
    attrs = labels[:, 1:].astype(np.int64)
    images = images.astype(np.float32)
    train = SampleSet(images[:n_train].copy(), cls[:n_train].copy(), attrs[:n_train].copy())
    test = SampleSet(images[n_train:].copy(), cls[n_train:].copy(), attrs[n_train:].copy())
    stats = manifest["stats"]
    return DatasetSplit(
        schema,
        classes,
        train,
        test,
        np.asarray(stats["mean"], dtype=np.float32),
        np.asarray(stats["std"], dtype=np.float32),
        float(manifest["free_attr_fraction"]),
        int(manifest["seed"]),
        meta=manifest.get("meta", {}),
    )
