import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image
from skimage.measure import label as cc_label, regionprops

from gradshift.data import (
    BENIGN,
    MALIGNANT,
    CorruptImageWarning,
    EmptyCorpusError,
    MissingMaskWarning,
    PhantomSpec,
    Sample,
    apply_transform,
    augment,
    export_corpus,
    generate_corpus,
    generate_phantom,
    load_corpus,
    prepare_dataset,
    split,
)

# -- phantoms --------------------------------------------------------------


def _solidity(mask):
    lab = cc_label(mask[..., 0] > 0.5, connectivity=2)
    props = regionprops(lab)
    return len(props), props[0].solidity


@pytest.mark.parametrize("seed", range(40))
def test_benign_mask_is_one_solid_component(seed):
    s = generate_phantom(PhantomSpec(seed=seed), BENIGN)
    n, solidity = _solidity(s.mask)
    assert n == 1
    assert solidity > 0.95


@pytest.mark.parametrize("seed", range(40))
def test_malignant_mask_is_spiculated(seed):
    s = generate_phantom(PhantomSpec(seed=seed), MALIGNANT)
    n, solidity = _solidity(s.mask)
    assert n == 1
    assert solidity < 0.85


@pytest.mark.parametrize("label", [BENIGN, MALIGNANT])
def test_phantom_invariants_and_determinism(label):
    a = generate_phantom(PhantomSpec(seed=11), label)
    b = generate_phantom(PhantomSpec(seed=11), label)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
    assert a.image.shape == a.mask.shape == (64, 64, 1)
    assert a.image.min() >= 0 and a.image.max() <= 1
    assert set(np.unique(a.mask)) == {0.0, 1.0}
    # the lesion keeps the margin
    rows, cols = np.nonzero(a.mask[..., 0])
    assert rows.min() >= 4 and cols.min() >= 4 and rows.max() <= 59 and cols.max() <= 59


def test_lesion_is_hypoechoic():
    s = generate_phantom(PhantomSpec(seed=3), MALIGNANT)
    inside = s.image[s.mask > 0].mean()
    outside = s.image[s.mask == 0].mean()
    assert inside < outside - 0.2


def test_phantom_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec(size=16).validate()
    with pytest.raises(ValueError):
        PhantomSpec(min_aspect=0.0).validate()
    with pytest.raises(ValueError):
        PhantomSpec(benign_axes=(0.3, 0.2)).validate()
    with pytest.raises(ValueError):
        generate_phantom(PhantomSpec(), 2)


def test_generate_corpus_layout():
    samples = generate_corpus(3, seed=5)
    assert [s.label for s in samples] == [0, 0, 0, 1, 1, 1]
    assert len({s.source_id for s in samples}) == 6
    again = generate_corpus(3, seed=5)
    assert all(np.array_equal(a.image, b.image) for a, b in zip(samples, again))


# -- corpus I/O ------------------------------------------------------------


def _write(path, array, fmt=None):
    Image.fromarray(np.asarray(array, dtype=np.uint8), mode="L").save(path, format=fmt)


def test_load_corpus_skips_corrupt_file(tmp_path):
    (tmp_path / "benign").mkdir()
    (tmp_path / "malignant").mkdir()
    rng = np.random.default_rng(0)
    for name, folder in (("a", "benign"), ("b", "benign"), ("c", "malignant")):
        _write(tmp_path / folder / f"{name}.png", rng.integers(0, 256, (40, 40)))
        _write(tmp_path / folder / f"{name}_mask.png", np.full((40, 40), 255))
    (tmp_path / "malignant" / "broken.png").write_bytes(b"not a png at all")
    with pytest.warns(CorruptImageWarning) as record:
        samples = load_corpus(tmp_path, size=16)
    assert len(samples) == 3
    assert len([w for w in record if issubclass(w.category, CorruptImageWarning)]) == 1
    assert [s.label for s in samples] == [0, 0, 1]
    assert all(s.mask.min() == 1 for s in samples)


def test_load_corpus_resizes_to_target(tmp_path):
    (tmp_path / "benign").mkdir()
    _write(tmp_path / "benign" / "big.png", np.random.default_rng(1).integers(0, 256, (500, 500)))
    _write(tmp_path / "benign" / "big_mask.png", np.zeros((500, 500)))
    s = load_corpus(tmp_path, size=224)[0]
    assert s.image.shape == (224, 224, 1) and s.mask.shape == (224, 224, 1)
    assert 0 <= s.image.min() and s.image.max() <= 1


def test_black_image_and_bmp(tmp_path):
    (tmp_path / "benign").mkdir()
    (tmp_path / "malignant").mkdir()
    _write(tmp_path / "benign" / "black.png", np.zeros((64, 64)))
    _write(tmp_path / "benign" / "black_mask.png", np.zeros((64, 64)))
    art = np.random.default_rng(2).integers(0, 256, (64, 64))
    _write(tmp_path / "malignant" / "p.png", art)
    _write(tmp_path / "malignant" / "p_mask.png", art > 128)
    _write(tmp_path / "malignant" / "q.bmp", art, fmt="BMP")
    _write(tmp_path / "malignant" / "q_mask.bmp", art > 128, fmt="BMP")
    samples = {s.source_id: s for s in load_corpus(tmp_path, size=64)}
    assert not np.any(samples["benign/black"].image)
    assert np.array_equal(samples["malignant/p"].image, samples["malignant/q"].image)
    assert np.array_equal(samples["malignant/p"].image[..., 0], art / 255.0)


def test_missing_mask_warns(tmp_path):
    (tmp_path / "benign").mkdir()
    _write(tmp_path / "benign" / "x.png", np.full((8, 8), 100))
    with pytest.warns(MissingMaskWarning):
        s = load_corpus(tmp_path, size=8)[0]
    assert not np.any(s.mask)


def test_normal_folder_policy(tmp_path):
    for folder in ("benign", "normal"):
        (tmp_path / folder).mkdir()
        _write(tmp_path / folder / "x.png", np.full((8, 8), 50))
        _write(tmp_path / folder / "x_mask.png", np.zeros((8, 8)))
    assert len(load_corpus(tmp_path, size=8)) == 1
    both = load_corpus(tmp_path, size=8, include_normal=True)
    assert [s.label for s in both] == [BENIGN, BENIGN]


def test_empty_corpus_is_an_error(tmp_path):
    with pytest.raises(EmptyCorpusError):
        load_corpus(tmp_path)


def test_export_then_load_round_trip(tmp_path):
    samples = generate_corpus(2, seed=1)
    export_corpus(samples, tmp_path)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        back = load_corpus(tmp_path)
    assert len(back) == 4
    for a, b in zip(samples, back):
        assert a.label == b.label
        assert np.abs(a.image - b.image).max() <= 0.5 / 255 + 1e-12
        assert np.array_equal(a.mask, b.mask)


# -- augmentation ----------------------------------------------------------


def test_hundred_sources_give_four_hundred_samples():
    sources = generate_corpus(50, seed=2)
    out = [a for i, s in enumerate(sources) for a in augment(s, seed=0, index=i)]
    assert len(out) == 400
    assert all(a.label == s.label for i, s in enumerate(sources) for a in out[4 * i : 4 * i + 4])


def test_identity_transform():
    img = np.random.default_rng(0).uniform(0, 1, (16, 16, 1))
    params = {"flip": False, "rotation_deg": 0.0, "shift": [0.0, 0.0]}
    assert np.array_equal(apply_transform(img, params, 1), img)


def test_flip_is_an_involution():
    img = np.random.default_rng(0).uniform(0, 1, (16, 16, 1))
    params = {"flip": True, "rotation_deg": 0.0, "shift": [0.0, 0.0]}
    assert np.array_equal(apply_transform(apply_transform(img, params, 1), params, 1), img)


def test_integer_shift_moves_pixels():
    img = np.random.default_rng(0).uniform(0, 1, (16, 16))
    out = apply_transform(img, {"flip": False, "rotation_deg": 0.0, "shift": [2.0, -3.0]}, 0)
    expected = np.zeros_like(img)
    expected[2:, :13] = img[:14, 3:] > 0.5
    assert np.array_equal(out, expected)


def test_augmentation_parameters_and_mask_consistency():
    s = generate_phantom(PhantomSpec(seed=9), MALIGNANT)
    for a in augment(s, seed=4, index=7):
        p = a.aug_params
        assert -5 <= p["rotation_deg"] <= 5
        assert all(abs(v) <= 6.4 for v in p["shift"])
        assert np.array_equal(apply_transform(s.mask, p, 0), a.mask)
        assert np.array_equal(apply_transform(s.image, p, 1), a.image)
        assert set(np.unique(a.mask)) <= {0.0, 1.0}
        assert a.image.min() >= 0 and a.image.max() <= 1


def test_augment_is_deterministic_per_index():
    s = generate_phantom(PhantomSpec(seed=1), BENIGN)
    a, b = augment(s, seed=3, index=5), augment(s, seed=3, index=5)
    c = augment(s, seed=3, index=6)
    assert [x.aug_params for x in a] == [x.aug_params for x in b]
    assert [x.aug_params for x in a] != [x.aug_params for x in c]


# -- splitting -------------------------------------------------------------


def _stub_sources(n_per_class):
    z = np.zeros((4, 4, 1))
    return [Sample(z, label, z, source_id=f"{label}/{i}") for label in (0, 1) for i in range(n_per_class)]


def test_split_fractions_per_class():
    ds = split(_stub_sources(100), seed=0)
    for label in (0, 1):
        counts = [sum(s.label == label for s in part) for part in (ds.train, ds.val, ds.test)]
        assert abs(counts[0] - 70) <= 1 and abs(counts[1] - 10) <= 1 and abs(counts[2] - 20) <= 1


@settings(max_examples=20, deadline=None)
@given(n=st.integers(50, 300), seed=st.integers(0, 1000))
def test_stratification_within_two_points(n, seed):
    ds = split(_stub_sources(n), seed=seed)
    for label in (0, 1):
        for part, frac in ((ds.train, 0.7), (ds.val, 0.1), (ds.test, 0.2)):
            got = sum(s.label == label for s in part) / n
            assert abs(got - frac) <= 0.02


def test_split_is_deterministic():
    a, b = split(_stub_sources(20), seed=3), split(_stub_sources(20), seed=3)
    assert a.assignment == b.assignment
    assert split(_stub_sources(20), seed=4).assignment != a.assignment


def test_split_errors():
    with pytest.raises(ValueError):
        split(_stub_sources(10), fractions=(0.5, 0.2, 0.2))
    with pytest.raises(ValueError, match="at least 3"):
        split(_stub_sources(2))


def test_no_leakage_after_augmentation():
    sources = generate_corpus(12, seed=0)
    ds = prepare_dataset(sources, seed=1)
    seen = {}
    for s in ds.all():
        assert seen.setdefault(s.source_id, s.split) == s.split
        assert ds.assignment[s.source_id] == s.split
    assert len(ds.train) == 4 * sum(v == "train" for v in ds.assignment.values())
    assert all(s.aug_params is None for s in ds.val + ds.test)


def test_manifest_records_provenance(tmp_path):
    ds = prepare_dataset(generate_corpus(10, seed=0), seed=0)
    path = tmp_path / "m.json"
    ds.write_manifest(path)
    rows = json.loads(path.read_text())
    assert len(rows) == len(ds.all())
    assert {r["split"] for r in rows} == {"train", "val", "test"}
    assert all(r["corpus"] == "synthetic" for r in rows)
