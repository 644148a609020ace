import csv

import numpy as np
import pytest

from geodesic_recon import (
    PLUS_INFINITY,
    Box,
    BusemannEstimator,
    NotStabilizedError,
    build_switching_dag,
    geodesic,
    sample_field,
)
from geodesic_recon._validation import EQ_TOL, level
from geodesic_recon.differential import (
    d_length,
    differential_distance,
    differential_from,
    is_ancestral,
    relative_differential,
    sweep,
    write_sweep_csv,
)

WINDOW = Box(0, 29, 0, 29)


@pytest.fixture(scope="module")
def fitted():
    est = BusemannEstimator(directions=(0.5, 1.0, 2.0), max_doublings=2).fit(sample_field(WINDOW, 77), WINDOW)
    dag = build_switching_dag(est.tree(0.5), est.tree(2.0), est.field_)
    return est, est.busemann(1.0), est.tree(1.0), dag


def _pairs(n, seed, box=WINDOW):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        p = (int(rng.integers(box.i_min, box.i_max + 1)), int(rng.integers(box.j_min, box.j_max + 1)))
        q = (p[0] + int(rng.integers(0, 8)), p[1] + int(rng.integers(0, 8)))
        if box.contains(q):
            out.append((p, q))
    return out


def test_trivial_and_unreachable(fitted):
    est, b, _, _ = fitted
    assert differential_distance(b, est.field_, (4, 4), (4, 4)) == 0.0
    assert differential_distance(b, est.field_, (6, 4), (5, 9)) == PLUS_INFINITY
    assert differential_distance(b, est.field_, (6, 6), (5, 5)) == PLUS_INFINITY


def test_zero_along_the_ray(fitted):
    est, b, tree, _ = fitted
    p = (3, 7)
    for q in tree.ray(p, until_level=level(p) + 20, certified=True):
        assert differential_distance(b, est.field_, p, tuple(q)) == pytest.approx(0.0, abs=EQ_TOL)


def test_zero_exactly_on_ancestral_pairs(fitted):
    est, b, tree, _ = fitted
    seen = {True: 0, False: 0}
    for p, q in _pairs(400, 0):
        if not b.certified_pair(p, q) or tree.certified_reach(p) < level(q):
            continue
        dd = differential_distance(b, est.field_, p, q)
        anc = is_ancestral(tree, p, q)
        assert dd >= -EQ_TOL
        assert (abs(dd) <= EQ_TOL) == anc
        seen[anc] += 1
    assert seen[True] > 0 and seen[False] > 0


def test_triangle_inequality(fitted):
    est, b, _, _ = fitted
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(300):
        p = tuple(int(v) for v in rng.integers(0, 10, 2))
        q = tuple(int(v) + int(s) for v, s in zip(p, rng.integers(0, 8, 2)))
        r = tuple(int(v) + int(s) for v, s in zip(q, rng.integers(0, 8, 2)))
        if not all(b.certified_pair(x, y) for x, y in ((p, q), (q, r), (p, r))):
            continue
        f = est.field_
        lhs = differential_distance(b, f, p, r)
        assert lhs <= differential_distance(b, f, p, q) + differential_distance(b, f, q, r) + EQ_TOL
        checked += 1
    assert checked > 100


def test_pointwise_matches_block(fitted):
    est, b, _, _ = fitted
    block = differential_from(b, est.field_, (2, 3), (12, 10))
    assert block.shape == (11, 8)
    assert block[5, 4] == pytest.approx(differential_distance(b, est.field_, (2, 3), (7, 7), strict=False))


def test_d_length_of_geodesic_equals_distance(fitted):
    est, b, _, _ = fitted
    p, q = (1, 2), (9, 14)
    path = geodesic(est.field_, p, q)
    assert d_length(b, est.field_, path) == pytest.approx(differential_distance(b, est.field_, p, q), abs=EQ_TOL)
    assert d_length(b, est.field_, [(5, 5)]) == 0.0
    zigzag = [(1, 2)] + [(1 + k // 2 + k % 2, 2 + k // 2) for k in range(1, 16)]
    assert d_length(b, est.field_, zigzag) >= differential_distance(b, est.field_, (1, 2), zigzag[-1]) - EQ_TOL


def test_relative_dominates_plain(fitted):
    est, b, _, dag = fitted
    finite = 0
    for p, q in _pairs(300, 5):
        try:
            rel = relative_differential(dag, b, p, q)
        except NotStabilizedError:
            continue
        if np.isfinite(rel):
            finite += 1
            assert rel >= differential_distance(b, est.field_, p, q, strict=False) - EQ_TOL
    assert finite > 20


def test_relative_requires_matching_region(fitted):
    est, _, _, dag = fitted
    other = BusemannEstimator(directions=(1.0,), max_doublings=0).fit(sample_field(Box(0, 9, 0, 9), 1), Box(0, 9, 0, 9))
    with pytest.raises(ValueError):
        relative_differential(dag, other.busemann(1.0), (0, 0), (1, 1))


def test_sweep_csv(tmp_path, fitted):
    est, b, tree, dag = fitted
    rows = sweep(tree, b, est.field_, dag, _pairs(20, 9))
    path = write_sweep_csv(rows, tmp_path / "sweep.csv")
    with open(path) as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 20
    assert set(table[0]) == {"p_i", "p_j", "q_i", "q_j", "D", "ancestral", "relative_D", "gap"}
