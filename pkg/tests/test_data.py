import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edd.data import (
    NO_CLASS,
    PALETTE,
    AttributeGroup,
    AttributeSchema,
    DatasetConfig,
    DatasetError,
    SchemaError,
    SignClass,
    build_dataset,
    channel_stats,
    default_classes,
    default_schema,
    load_dataset,
    onehot,
    render_sign,
    save_dataset,
    validate_classes,
)

SCHEMA = default_schema()


@pytest.fixture(scope="module")
def split():
    return build_dataset(SCHEMA, default_classes(SCHEMA), DatasetConfig(n_train=240, n_test=48, seed=3))


def nearest_palette(img, mask):
    names = list(PALETTE)
    ref = np.array([PALETTE[n] for n in names])  # [P, 3]
    px = img.transpose(1, 2, 0)[mask]  # [M, 3]
    d = ((px[:, None, :] - ref[None]) ** 2).sum(-1)
    return np.array(names)[d.argmin(axis=1)]


# -- schema and classes -------------------------------------------------------


def test_default_schema_groups_and_tiers():
    assert SCHEMA.names == ("main_color", "border_color", "shape", "symbol")
    assert [g.tier for g in SCHEMA.groups] == ["simple", "simple", "medium", "complex"]
    assert SCHEMA.sizes == (4, 4, 4, 7)
    assert SCHEMA.group("symbol").values == ("none", "bar", "dot", "cross", "chevron", "digit8", "digit0")


def test_schema_invariants():
    with pytest.raises(SchemaError):
        AttributeSchema((AttributeGroup("a", ("x", "y"), "simple"), AttributeGroup("a", ("x", "y"), "simple")))
    with pytest.raises(SchemaError):
        AttributeSchema((AttributeGroup("a", ("x",), "simple"),))
    with pytest.raises(SchemaError):
        AttributeSchema((AttributeGroup("a", ("x", "y"), "hard"),))


def test_schema_encode_decode_and_dict():
    code = SCHEMA.encode({"main_color": "red", "border_color": "none", "shape": "octagon", "symbol": "bar"})
    assert code == (1, 3, 3, 1)
    assert SCHEMA.decode(code) == ("red", "none", "octagon", "bar")
    assert AttributeSchema.from_dict(SCHEMA.to_dict()) == SCHEMA
    with pytest.raises(SchemaError):
        SCHEMA.encode({"main_color": "purple", "border_color": "none", "shape": "octagon", "symbol": "bar"})


def test_default_classes_are_distinct_and_valid():
    classes = default_classes(SCHEMA)
    assert len(classes) == 8
    assert [c.id for c in classes] == list(range(8))
    codes = {SCHEMA.encode(c.assignment) for c in classes}
    assert len(codes) == 8
    validate_classes(SCHEMA, classes)


def test_duplicate_class_definitions_are_rejected():
    a = default_classes(SCHEMA)[0]
    with pytest.raises(SchemaError):
        validate_classes(SCHEMA, [a, SignClass(1, "copy", a.assignment)])


# -- rendering ------------------------------------------------------------------


def test_red_octagon_interior_is_mostly_red():
    for seed in range(10):
        img, mask = render_sign(("red", "none", "octagon", "bar"), seed, return_mask=True)
        near = nearest_palette(img, mask)
        assert (near == "red").mean() >= 0.40, seed


@pytest.mark.parametrize("color", ["white", "red", "blue", "yellow"])
def test_main_colour_dominates_interior(color):
    for seed in range(5):
        img, mask = render_sign((color, "none", "square", "dot"), seed, return_mask=True)
        near = nearest_palette(img, mask)
        values, counts = np.unique(near, return_counts=True)
        assert values[counts.argmax()] == color


def test_render_is_deterministic_and_in_range():
    a = render_sign(("white", "red", "circle", "digit8"), 42)
    b = render_sign(("white", "red", "circle", "digit8"), 42)
    assert a.dtype == np.float32 and a.shape == (3, 32, 32)
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0 and a.max() <= 1


def test_shape_changes_image():
    a = render_sign(("blue", "red", "circle", "none"), 5)
    b = render_sign(("blue", "red", "square", "none"), 5)
    assert np.abs(a - b).sum() > 10


def test_every_glyph_changes_image():
    imgs = [render_sign(("white", "none", "circle", s), 1) for s in SCHEMA.group("symbol").values]
    for a, b in itertools.combinations(imgs, 2):
        assert np.abs(a - b).sum() > 5


def test_render_rejects_unknown_value():
    with pytest.raises(SchemaError):
        render_sign(("red", "none", "hexagon", "bar"), 0)


def test_render_size_parameter():
    assert render_sign(("red", "none", "circle", "bar"), 0, size=16).shape == (3, 16, 16)


# -- dataset ----------------------------------------------------------------------


def test_class_derived_attributes_match_definition(split):
    codes = np.array([SCHEMA.encode(c.assignment) for c in split.classes])
    for s in (split.train, split.test):
        m = s.class_mask
        np.testing.assert_array_equal(s.attributes[m], codes[s.class_ids[m]])


def test_free_fraction_and_test_is_class_only(split):
    assert (~split.train.class_mask).sum() == round(0.39 * 240)
    assert split.test.class_mask.all()


def test_class_histogram_is_balanced(split):
    counts = np.bincount(split.train.class_ids[split.train.class_mask], minlength=8)
    assert counts.max() / counts.min() <= 1.1
    counts = np.bincount(split.test.class_ids, minlength=8)
    assert counts.max() / counts.min() <= 1.1


def test_normalization_tolerance(split):
    x = split.train_normalized().astype(np.float64)
    np.testing.assert_allclose(x.mean(axis=(0, 2, 3)), 0.0, atol=0.05)
    np.testing.assert_allclose(x.std(axis=(0, 2, 3)), 1.0, atol=0.05)


def test_stats_come_from_train_only(split):
    mean, std = channel_stats(split.train.images)
    np.testing.assert_array_equal(split.mean, mean)
    np.testing.assert_array_equal(split.std, std)


def test_attribute_value_coverage_at_default_fraction():
    s = build_dataset(config=DatasetConfig(n_train=400, n_test=8, seed=11))
    for k, size in enumerate(SCHEMA.sizes):
        assert set(s.train.attributes[:, k]) == set(range(size))


def test_zero_free_fraction_gives_only_class_samples():
    s = build_dataset(config=DatasetConfig(n_train=40, n_test=8, free_attr_fraction=0.0))
    assert s.train.class_mask.all()


def test_distinct_seeds_give_distinct_data_same_schema():
    a = build_dataset(config=DatasetConfig(n_train=24, n_test=8, seed=1))
    b = build_dataset(config=DatasetConfig(n_train=24, n_test=8, seed=2))
    assert a.fingerprint() != b.fingerprint()
    assert a.schema == b.schema
    c = build_dataset(config=DatasetConfig(n_train=24, n_test=8, seed=1))
    assert a.fingerprint() == c.fingerprint()


def test_train_and_test_images_disjoint(split):
    train = {img.tobytes() for img in split.train.images}
    assert not any(img.tobytes() in train for img in split.test.images)


@pytest.mark.parametrize("kw", [{"n_train": 0}, {"n_test": 0}, {"free_attr_fraction": 1.0}, {"free_attr_fraction": -0.1}])
def test_dataset_config_errors(kw):
    with pytest.raises(DatasetError):
        DatasetConfig(**kw)


def test_sample_one_hots(split):
    free = int(np.nonzero(~split.train.class_mask)[0][0])
    s = split.sample("train", free)
    assert s.class_id == NO_CLASS and s.class_onehot is None
    for oh in s.attribute_onehots:
        assert oh.sum() == 1
    s = split.sample("test", 0)
    assert s.class_onehot.sum() == 1 and s.class_onehot[s.class_id] == 1


def test_onehot_negative_index_is_zero_row():
    np.testing.assert_array_equal(onehot(np.array([2, -1, 0]), 3), [[0, 0, 1], [0, 0, 0], [1, 0, 0]])


# -- dataset file -------------------------------------------------------------------


def test_dataset_round_trip(tmp_path, split):
    p = tmp_path / "d.eddd"
    save_dataset(split, p)
    r = load_dataset(p)
    assert r.fingerprint() == split.fingerprint()
    assert r.schema == split.schema
    assert [c.assignment for c in r.classes] == [c.assignment for c in split.classes]
    np.testing.assert_array_equal(r.mean, split.mean)
    np.testing.assert_array_equal(r.std, split.std)
    np.testing.assert_array_equal(r.train.class_ids, split.train.class_ids)


def test_stored_stats_match_recomputed(tmp_path, split):
    p = tmp_path / "d.eddd"
    save_dataset(split, p)
    r = load_dataset(p)
    mean, std = channel_stats(r.train.images)
    np.testing.assert_allclose(r.mean, mean, rtol=1e-6)
    np.testing.assert_allclose(r.std, std, rtol=1e-6)


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:4] + (7).to_bytes(4, "little") + b[8:], "version"),
        (lambda b: b[:-10], "truncated"),
        (lambda b: b[:8], "truncated"),
        (lambda b: b[:16], "truncated"),
        (lambda b: b + b"\0\0", "oversized"),
    ],
)
def test_dataset_corruption(tmp_path, mutate, match):
    s = build_dataset(config=DatasetConfig(n_train=6, n_test=4))
    p = tmp_path / "d.eddd"
    save_dataset(s, p)
    p.write_bytes(mutate(p.read_bytes()))
    with pytest.raises(DatasetError, match=match):
        load_dataset(p)


@settings(max_examples=25, deadline=None)
@given(st.tuples(*[st.integers(0, n - 1) for n in SCHEMA.sizes]), st.integers(0, 2**32 - 1))
def test_render_any_assignment(code, seed):
    img, mask = render_sign(SCHEMA.decode(code), seed, return_mask=True)
    assert img.shape == (3, 32, 32) and np.isfinite(img).all()
    assert 0 <= img.min() and img.max() <= 1
    assert mask.sum() > 32 * 32 * 0.1
