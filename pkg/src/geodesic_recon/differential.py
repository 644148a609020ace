"""Differential distance ``D_d = W_d - G`` and its switching-walk restriction."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

import numpy as np

from . import _kernels as K
from ._validation import (
    EQ_TOL,
    PLUS_INFINITY,
    NotStabilizedError,
    as_point,
    check_in,
    check_path,
    finite_or_none,
    level,
)
from .busemann import BusemannField, GeodesicTree
from .lpp import WeightField, passage_time, passage_times_from, path_length
from .modified import SwitchingDag, modified_distance


def _check_certified(bfield: BusemannField, p, q, strict: bool) -> None:
    if strict and not bfield.certified_pair(p, q):
        raise NotStabilizedError(f"Busemann difference {p}->{q} is not certified")


def differential_distance(bfield: BusemannField, field: WeightField, p, q, strict: bool = True) -> float:
    """``W_d(p; q) - G(p; q)``; ``PLUS_INFINITY`` when q is not reachable from p."""
    p, q = as_point(p), as_point(q)
    check_in(bfield.region, p, q, what="Busemann region")
    if p == q:
        return 0.0
    if q[0] < p[0] or q[1] < p[1]:
        return PLUS_INFINITY
    _check_certified(bfield, p, q, strict)
    return bfield(p, q) - passage_time(field, p, q)


def differential_from(bfield: BusemannField, field: WeightField, p, upto=None) -> np.ndarray:
    """``D_d(p; v)`` for every v in the box spanned by p and ``upto`` (no certification check)."""
    p = as_point(p)
    upto = bfield.region.corner if upto is None else as_point(upto)
    g = passage_times_from(field, p, upto)
    a, b = bfield.region.local(p)
    c, e = bfield.region.local(upto)
    w = bfield.values[a : c + 1, b : e + 1]
    return (w[0, 0] - w) - g


def is_ancestral(tree: GeodesicTree, p, q, strict: bool = True) -> bool:
    """Whether q lies on the ray from p (p itself counts)."""
    p, q = as_point(p), as_point(q)
    check_in(tree.region, p, q, what="tree region")
    if p == q:
        return True
    if level(q) < level(p):
        return False
    if strict and tree.certified_reach(p) < level(q):
        raise NotStabilizedError(f"ray from {p} is certified only to level {tree.certified_reach(p)}")
    ray = tree.ray(p, until_level=level(q))
    return len(ray) == level(q) - level(p) + 1 and tuple(ray[-1]) == q


def d_length(
    bfield: BusemannField, field: WeightField, path, coarse_checks: int = 3, seed: int = 0
) -> float:
    """Sum of ``D_d`` over the unit steps of a path.

    The finest partition dominates every coarser one by the triangle inequality; this is
    asserted on ``coarse_checks`` random coarser partitions, together with the identity
    ``d_length = W_d(start; end) - path_length``.
    """
    pts = check_path(path)
    check_in(bfield.region, tuple(pts[0]), tuple(pts[-1]), what="Busemann region")
    if len(pts) == 1:
        return 0.0
    loc = pts - np.array(bfield.region.origin)
    w_vals = bfield.values[loc[:, 0], loc[:, 1]]
    fw = pts[1:] - np.array(field.box.origin)
    weights = field.weights[fw[:, 0], fw[:, 1]]
    steps = (w_vals[:-1] - w_vals[1:]) - weights
    total = float(steps.sum())
    telescoped = float(w_vals[0] - w_vals[-1]) - path_length(field, pts)
    if abs(total - telescoped) > EQ_TOL:
        raise AssertionError(f"step sum {total} differs from W - length {telescoped}")
    rng = np.random.default_rng(seed)
    for _ in range(coarse_checks if len(pts) > 2 else 0):
        cut = np.sort(rng.choice(np.arange(1, len(pts) - 1), size=rng.integers(0, len(pts) - 1), replace=False))
        knots = np.concatenate([[0], cut, [len(pts) - 1]])
        coarse = sum(
            float(w_vals[a] - w_vals[b]) - passage_time(field, tuple(pts[a]), tuple(pts[b]))
            for a, b in zip(knots[:-1], knots[1:])
        )
        if coarse > total + EQ_TOL:
            raise AssertionError("a coarser partition exceeded the finest one")
    return total


def relative_differential(dag: SwitchingDag, bfield: BusemannField, p, q) -> float:
    """``W_d(p; q) - L_modified(p; q)``, checked against the cheapest switching walk under
    per-step costs ``D_d``; ``PLUS_INFINITY`` when no walk joins p to q."""
    p, q = as_point(p), as_point(q)
    if bfield.region != dag.region:
        raise ValueError("Busemann field and DAG must live on the same region")
    best = modified_distance(dag, p, q)
    if not np.isfinite(best):
        return PLUS_INFINITY
    value = bfield(p, q) - best
    v = bfield.values
    # D_d of a single step u -> head is W(u; head) - weight(head)
    cost_i = np.full_like(v, np.nan)
    cost_j = np.full_like(v, np.nan)
    cost_i[:-1, :] = (v[:-1, :] - v[1:, :]) - dag.gain_i[:-1, :]
    cost_j[:, :-1] = (v[:, :-1] - v[:, 1:]) - dag.gain_j[:, :-1]
    a, b = dag.region.local(p)
    c, e = dag.region.local(q)
    val, _ = K.dag_forward(dag.step1, dag.step2, dag.excluded, -cost_i, -cost_j, a, b, c, e)
    cheapest = -float(val[-1, -1])
    if abs(cheapest - value) > EQ_TOL:
        raise AssertionError(f"sup/inf duality broken: {value} vs {cheapest}")
    return value


SWEEP_COLUMNS = ("p_i", "p_j", "q_i", "q_j", "D", "ancestral", "relative_D", "gap")


def sweep(
    tree: GeodesicTree, bfield: BusemannField, field: WeightField, dag: SwitchingDag, pairs: Iterable
) -> list[dict]:
    """One row per (p, q): differential distance, ancestry, restricted distance and their gap."""
    rows = []
    for p, q in pairs:
        p, q = as_point(p), as_point(q)
        dd = differential_distance(bfield, field, p, q, strict=False)
        try:
            rel = relative_differential(dag, bfield, p, q)
        except NotStabilizedError:
            rel = np.nan
        rows.append(
            {
                "p_i": p[0],
                "p_j": p[1],
                "q_i": q[0],
                "q_j": q[1],
                "D": dd,
                "ancestral": is_ancestral(tree, p, q, strict=False),
                "relative_D": rel,
                "gap": rel - dd,
            }
        )
    return rows


def write_sweep_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(SWEEP_COLUMNS)
        for r in rows:
            cells = []
            for c in SWEEP_COLUMNS:
                v = r[c]
                if isinstance(v, (bool, np.bool_)):
                    cells.append(int(v))
                elif isinstance(v, float):
                    f = finite_or_none(v) if not np.isnan(v) else None
                    cells.append("" if f is None else repr(round(f, 12)))
                else:
                    cells.append(v)
            out.writerow(cells)
    return path
