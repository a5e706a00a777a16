import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import spearmanr

from gradshift.metrics import (
    CSV_HEADER,
    NA,
    append_csv_row,
    center_of_mass,
    classification_metrics,
    read_csv_rows,
    shift_metrics,
    spearman,
    topk_overlap,
)

M, B = 1, 0

int_maps = arrays(np.float64, (8, 8), elements=st.integers(0, 40).map(float))


def test_all_correct():
    m = classification_metrics([M, B, M], [M, B, M])
    assert (m.accuracy, m.sensitivity, m.specificity) == (1.0, 1.0, 1.0)


def test_hand_counted_confusion_matrix():
    m = classification_metrics([M, M, B, B], [M, B, M, B])
    assert (m.accuracy, m.sensitivity, m.specificity) == (0.5, 0.5, 0.5)


def test_zero_denominators_are_marked():
    m = classification_metrics([B, M], [B, B])
    assert m.sensitivity is NA and m.specificity == 0.5
    m = classification_metrics([M, M], [M, M])
    assert m.specificity is NA and m.sensitivity == 1.0


def test_classification_errors():
    with pytest.raises(ValueError):
        classification_metrics([1, 0], [1])
    with pytest.raises(ValueError):
        classification_metrics([], [])


def _ramp():
    return np.arange(64 * 64, dtype=float).reshape(64, 64) / (64 * 64 - 1)


def test_identical_maps():
    m = shift_metrics(_ramp(), _ramp())
    assert m.rank_correlation == 1.0 and m.topk_overlap == 1.0 and m.com_displacement == 0.0


def test_flipped_map_is_anti_ranked():
    a = np.random.default_rng(0).uniform(0, 1, (64, 64))
    assert shift_metrics(a, 1 - a).rank_correlation == -1.0


def test_point_masses_ten_pixels_apart():
    a, b = np.zeros((64, 64)), np.zeros((64, 64))
    a[10, 10] = 1.0
    b[20, 10] = 1.0
    assert shift_metrics(a, b).com_displacement == 10.0


def test_degenerate_map():
    m = shift_metrics(np.zeros((8, 8)), _ramp()[:8, :8] + 0.1)
    assert m.rank_correlation is NA and m.degenerate
    assert center_of_mass(np.zeros((8, 8))) == (3.5, 3.5)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        shift_metrics(np.zeros((4, 4)), np.zeros((5, 5)))


def test_ties_use_average_ranks():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 4, 50).astype(float)
    b = rng.integers(0, 4, 50).astype(float)
    assert spearman(a, b) == pytest.approx(spearmanr(a, b).statistic, abs=1e-12)
    assert spearman(np.ones(5), np.arange(5.0)) is NA


@settings(max_examples=60, deadline=None)
@given(a=int_maps, b=int_maps)
def test_symmetry(a, b):
    assert spearman(a, b) == spearman(b, a)
    assert topk_overlap(a, b) == topk_overlap(b, a)


@settings(max_examples=60, deadline=None)
@given(a=int_maps, b=int_maps, which=st.sampled_from(["affine", "cube", "exp"]))
def test_monotone_transform_invariance(a, b, which):
    f = {"affine": lambda x: 3 * x + 1, "cube": lambda x: x**3, "exp": lambda x: np.exp(x / 10)}[which]
    rho = spearman(a, b)
    if rho is None:
        assert spearman(f(a), b) is None
    else:
        assert spearman(f(a), b) == pytest.approx(rho, abs=1e-12)
    assert topk_overlap(f(a), b) == topk_overlap(a, b)


@settings(max_examples=40, deadline=None)
@given(
    m=arrays(np.float64, (6, 6), elements=st.floats(0, 1)),
    dy=st.integers(0, 10),
    dx=st.integers(0, 10),
)
def test_centroid_translation(m, dy, dx):
    canvas = np.zeros((20, 20))
    canvas[2:8, 3:9] = m
    moved = np.zeros((20, 20))
    moved[2 + dy : 8 + dy, 3 + dx : 9 + dx] = m
    if m.sum() <= 0:
        return
    (y0, x0), (y1, x1) = center_of_mass(canvas), center_of_mass(moved)
    assert y1 - y0 == pytest.approx(dy, abs=1e-9)
    assert x1 - x0 == pytest.approx(dx, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(a=arrays(np.float64, (8, 8), elements=st.floats(0, 1)), b=arrays(np.float64, (8, 8), elements=st.floats(0, 1)))
def test_ranges(a, b):
    m = shift_metrics(a, b)
    assert 0 <= m.topk_overlap <= 1
    assert 0 <= m.com_displacement <= 8 * math.sqrt(2)
    assert m.rank_correlation is None or -1 <= m.rank_correlation <= 1


def test_csv_round_trip(tmp_path):
    path = tmp_path / "attacks.csv"
    row = dict(image_id="a", mode="misclassify", label_before=1, label_after=0, conf_before=0.9,
               conf_after=0.6, rho=None, topk=0.25, com_px=3.5, linf=0.1)
    append_csv_row(path, row)
    append_csv_row(path, {**row, "image_id": "b", "rho": 0.125})
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    rows = read_csv_rows(path)
    assert [r["image_id"] for r in rows] == ["a", "b"]
    assert rows[0]["rho"] == "" and float(rows[1]["rho"]) == 0.125
    assert float(rows[0]["conf_before"]) == 0.9


def test_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv_rows(path)
