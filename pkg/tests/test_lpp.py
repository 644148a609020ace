import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geodesic_recon import (
    MINUS_INFINITY,
    Box,
    BoxError,
    TieError,
    WeightField,
    brute_force_passage,
    geodesic,
    load_field,
    passage_time,
    passage_times_from,
    path_length,
    sample_field,
    save_field,
)


def test_sampling_is_deterministic():
    box = Box(0, 1, 0, 1)
    a, b = sample_field(box, 7), sample_field(box, 7)
    assert np.array_equal(a.weights, b.weights)


def test_sub_boxes_agree_pointwise():
    small = sample_field(Box(0, 3, 0, 3), 7)
    big = sample_field(Box(0, 9, 0, 9), 7)
    assert np.array_equal(small.weights, big.weights[:4, :4])
    shifted = sample_field(Box(2, 5, 3, 6), 7)
    assert np.array_equal(shifted.weights, big.weights[2:6, 3:7])


def test_exponential_mean_within_three_standard_errors():
    w = sample_field(Box(0, 99, 0, 99), 1).weights
    assert abs(w.mean() - 1.0) < 3 * w.std() / math.sqrt(w.size)
    assert (w > 0).all()


def test_geometric_tag_and_guards():
    w = sample_field(Box(0, 49, 0, 49), 3, "geometric").weights
    assert np.allclose(w, np.round(w)) and w.min() >= 1
    with pytest.raises(ValueError):
        sample_field(Box(0, 1, 0, 1), 0, "cauchy")
    with pytest.raises(BoxError):
        sample_field(Box(0, 2**15, 0, 1), 0)


def test_weights_are_distinct():
    assert sample_field(Box(0, 99, 0, 99), 5).min_gap() > 0


def test_passage_time_conventions():
    ones = WeightField.constant(Box(0, 1, 0, 1))
    assert passage_time(ones, (0, 0), (0, 0)) == 0.0
    assert passage_time(ones, (0, 0), (1, 1)) == 2.0
    assert passage_time(ones, (1, 0), (0, 0)) == MINUS_INFINITY
    assert brute_force_passage(ones, (0, 0), (1, 1)) == 2.0
    assert brute_force_passage(ones, (1, 1), (1, 1)) == 0.0


def test_out_of_box_points_raise():
    field = sample_field(Box(0, 4, 0, 4), 0)
    with pytest.raises(BoxError):
        passage_time(field, (0, 0), (5, 5))


def test_geodesic_ties_on_constant_field():
    ones = WeightField.constant(Box(0, 1, 0, 1))
    with pytest.raises(TieError):
        geodesic(ones, (0, 0), (1, 1))


def test_geodesic_of_single_point():
    field = sample_field(Box(0, 4, 0, 4), 0)
    assert geodesic(field, (2, 3), (2, 3)).tolist() == [[2, 3]]
    assert path_length(field, [(2, 3)]) == 0.0


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32),
    p=st.tuples(st.integers(0, 4), st.integers(0, 4)),
    q=st.tuples(st.integers(0, 4), st.integers(0, 4)),
)
def test_geodesic_value_and_additivity(seed, p, q):
    field = sample_field(Box(0, 4, 0, 4), seed)
    if q[0] < p[0] or q[1] < p[1]:
        return
    path = geodesic(field, p, q)
    g = passage_time(field, p, q)
    assert path_length(field, path) == pytest.approx(g, abs=1e-12)
    assert g == pytest.approx(brute_force_passage(field, p, q), abs=1e-12)
    for m in path:
        m = tuple(int(v) for v in m)
        assert passage_time(field, p, m) + passage_time(field, m, q) == pytest.approx(g, abs=1e-12)


def test_non_geodesic_paths_are_shorter():
    field = sample_field(Box(0, 5, 0, 5), 11)
    rng = np.random.default_rng(0)
    g = passage_time(field, (0, 0), (5, 5))
    for _ in range(50):
        steps = rng.permutation([1] * 5 + [0] * 5)
        pts = np.cumsum(np.concatenate([[[0, 0]], np.stack([steps, 1 - steps], axis=1)]), axis=0)
        assert path_length(field, pts) <= g + 1e-12


def test_invalid_path_step_raises():
    field = sample_field(Box(0, 4, 0, 4), 0)
    with pytest.raises(ValueError):
        path_length(field, [(0, 0), (1, 1)])
    with pytest.raises(ValueError):
        path_length(field, [(1, 0), (0, 0)])


def test_brute_force_size_guard():
    field = sample_field(Box(0, 13, 0, 13), 0)
    with pytest.raises(ValueError):
        brute_force_passage(field, (0, 0), (13, 0))


def test_passage_times_from_matches_pointwise():
    field = sample_field(Box(0, 9, 0, 9), 4)
    g = passage_times_from(field, (2, 3))
    assert g.shape == (8, 7)
    assert g[0, 0] == 0.0
    assert g[3, 4] == pytest.approx(passage_time(field, (2, 3), (5, 7)), abs=1e-12)


def test_field_round_trip(tmp_path):
    field = sample_field(Box(3, 12, 1, 8), 9)
    full = load_field(save_field(field, tmp_path / "f.npz"))
    header_only = load_field(save_field(field, tmp_path / "f.json", include_weights=False))
    for loaded in (full, header_only):
        assert loaded.box == field.box
        assert np.array_equal(loaded.weights, field.weights)


def test_extension_keeps_existing_weights():
    field = sample_field(Box(0, 4, 0, 4), 2)
    big = field.extended(Box(0, 9, 0, 9))
    assert np.array_equal(big.weights[:5, :5], field.weights)
    with pytest.raises(BoxError):
        WeightField.from_array(np.ones((2, 2)) + np.eye(2)).extended(Box(0, 5, 0, 5))
