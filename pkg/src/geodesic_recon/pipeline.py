"""Reconstruction from tree data and the Busemann difference alone.

Everything here consumes two (or more) geodesic trees plus values of
``delta = W_{d2} - W_{d1}``; weights and passage times are only used by the reporting
code that checks the reconstruction against ground truth.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from ._validation import (
    EQ_TOL,
    PLUS_INFINITY,
    Box,
    ReconError,
    BoxError,
    NotFoundError,
    NotStabilizedError,
    TieError,
    as_point,
    check_in,
    level,
)
from .busemann import BusemannEstimator, BusemannField, GeodesicTree, target_offset, target_point
from .delta import (
    DeltaProfile,
    cross_time_anchor,
    delta_row,
    partition_from_trees,
    plateau_partition,
    row_points,
)
from .lpp import WeightField, passage_time, passage_times_from, sample_field
from .modified import build_switching_dag, modified_distance


@dataclass
class DeltaField:
    """Values of ``W_{d2} - W_{d1}`` on a region, normalised to 0 at the region origin."""

    directions: tuple[float, float]
    region: Box
    values: np.ndarray = dc_field(repr=False)

    @classmethod
    def from_busemann(cls, b1: BusemannField, b2: BusemannField) -> "DeltaField":
        if b1.region != b2.region:
            raise BoxError("Busemann fields must share a region")
        return cls((b1.direction, b2.direction), b1.region, b2.values - b1.values)

    def __call__(self, p) -> float:
        p = as_point(p)
        check_in(self.region, p, what="delta region")
        return float(self.values[self.region.local(p)])

    def row(self, lev: int, box: Box | None = None) -> DeltaProfile:
        pts = row_points(self.region if box is None else box, lev)
        loc = pts - np.array(self.region.origin)
        vals = self.values[loc[:, 0], loc[:, 1]]
        return DeltaProfile(lev, pts, vals, np.ones(len(pts), dtype=bool))


def chain_rows(
    tree1: GeodesicTree,
    tree2: GeodesicTree,
    rows: dict[int, DeltaProfile],
    search_width: int = 8,
    lookback: int = 4,
) -> tuple[DeltaField, list[tuple[tuple[int, int], tuple[int, int]]]]:
    """Glue per-level profiles, each known only up to its own additive constant.

    Each level is joined to one of the ``lookback`` levels below it through an anchor
    pair x ~ y, on which delta agrees. The result carries the lowest level's constant.
    """
    levels = sorted(rows)
    if not levels:
        raise ValueError("no rows to chain")
    region = tree1.region
    values = np.full(region.shape, np.nan)
    anchors = []
    for k, lev in enumerate(levels):
        prof = rows[lev]
        offset = 0.0
        if k > 0:
            for prev in reversed(levels[max(0, k - lookback) : k]):
                box = _row_box(rows[prev], prof)
                try:
                    x, y = cross_time_anchor(tree1, tree2, prev, lev, search_width, box=box)
                except NotFoundError:
                    continue
                offset = _lookup(values, region, x) - _profile_value(prof, y)
                anchors.append((x, y))
                break
            else:
                raise NotFoundError(f"level {lev} has no anchor to the {lookback} levels below it")
        loc = prof.points - np.array(region.origin)
        values[loc[:, 0], loc[:, 1]] = prof.values + offset
    return DeltaField((tree1.direction, tree2.direction), region, values), anchors


def _row_box(a: DeltaProfile, b: DeltaProfile) -> Box:
    pts = np.concatenate([a.points, b.points])
    return Box(int(pts[:, 0].min()), int(pts[:, 0].max()), int(pts[:, 1].min()), int(pts[:, 1].max()))


def _lookup(values: np.ndarray, region: Box, p) -> float:
    return float(values[region.local(p)])


def _profile_value(prof: DeltaProfile, p) -> float:
    hit = np.flatnonzero((prof.points[:, 0] == p[0]) & (prof.points[:, 1] == p[1]))
    if hit.size == 0:
        raise NotFoundError(f"{p} is not on the profile of level {prof.level}")
    return float(prof.values[hit[0]])


# tree reconstruction


def _tree1_cost(tree1: GeodesicTree, delta: DeltaField) -> np.ndarray:
    """``delta(v) - delta(head)`` for v's tree-1 step; inf where the head leaves the region."""
    v = delta.values
    s = tree1.step
    cost = np.full(v.shape, np.inf)
    down = s[:-1, :] == K.STEP_I
    cost[:-1, :][down] = v[:-1, :][down] - v[1:, :][down]
    right = s[:, :-1] == K.STEP_J
    cost[:, :-1][right] = v[:, :-1][right] - v[:, 1:][right]
    return np.where(np.isfinite(cost), cost, np.inf)


@dataclass
class _Domain:
    """Step arrays on a box starting at the region origin; tree-1 edges only where priced."""

    box: Box
    step1: np.ndarray
    step2: np.ndarray
    cost1: np.ndarray
    excluded: np.ndarray


def _known(tree1: GeodesicTree, tree2: GeodesicTree, p, free_only: bool) -> bool:
    """Whether a target at p is usable. Beyond the region only tree-2 steps exist, which
    is unbiased only when the walks are meant to be tree-2 walks (``free_only``)."""
    if tree1.region.contains(p):
        return True
    return free_only and tree2.full_box is not None and tree2.full_box.contains(p)


def _domain(tree1: GeodesicTree, tree2: GeodesicTree, cost1: np.ndarray, corner) -> _Domain:
    region = tree1.region
    box = Box(region.i_min, corner[0], region.j_min, corner[1])
    n, m = box.shape
    s1 = np.full((n, m), K.NO_STEP, dtype=np.uint8)
    s2 = np.full((n, m), K.NO_STEP, dtype=np.uint8)
    c1 = np.full((n, m), np.inf)
    a, b = min(n, region.shape[0]), min(m, region.shape[1])
    priced = np.isfinite(cost1[:a, :b])
    s1[:a, :b] = np.where(priced, tree1.step[:a, :b], K.NO_STEP)
    c1[:a, :b] = cost1[:a, :b]
    if tree2.full_step is not None:
        fa, fb = min(n, tree2.full_step.shape[0]), min(m, tree2.full_step.shape[1])
        s2[:fa, :fb] = tree2.full_step[:fa, :fb]
    else:
        s2[:a, :b] = tree2.step[:a, :b]
    return _Domain(box, s1, s2, c1, np.zeros((n, m), dtype=bool))


def _reachable_target(tree1, tree2, cost1, q, width: int, free_only: bool):
    """Point on q's level within ``width`` of q reached by the most window vertices, the
    nearest one on ties; returns (count, point, domain) or None when nothing qualifies."""
    win = tree1.window
    wn, wm = win.i_max - tree1.region.i_min + 1, win.j_max - tree1.region.j_min + 1
    best = None
    for k in sorted(range(-width, width + 1), key=lambda k: (abs(k), k)):
        c = (q[0] - k, q[1] + k)
        if c[0] < win.i_max or c[1] < win.j_max or not _known(tree1, tree2, c, free_only):
            continue
        dom = _domain(tree1, tree2, cost1, c)
        ti, tj = dom.box.local(c)
        count = int(K.dag_backward_reach(dom.step1, dom.step2, dom.excluded, ti, tj)[:wn, :wm].sum())
        if best is None or count > best[0]:
            best = (count, c, dom)
        if count == wn * wm:
            break
    return best


def _search_width(horizon: int, d: float, others: Sequence[float]) -> int:
    """KPZ-scale jitter, capped at a quarter of the transverse gap to the nearest other
    direction's target so the chosen point still points in direction d."""
    own = target_offset(d, horizon)[0]
    gaps = [abs(target_offset(e, horizon)[0] - own) for e in others if not math.isclose(e, d, rel_tol=1e-12)]
    cap = min(gaps) // 4 if gaps else horizon
    return max(1, min(int(2 * horizon ** (2.0 / 3.0)), cap))


def reconstruct_tree(
    tree1: GeodesicTree,
    tree2: GeodesicTree,
    delta: DeltaField,
    d: float,
    horizon: int | None = None,
    on_tie: str = "raise",
) -> GeodesicTree:
    """Geodesic tree of direction d in ``[d1, d2]`` from two trees and delta.

    Walks over the two trees are priced by ``D_{d2}``: tree-2 steps are free and a tree-1
    step costs the drop of delta along it. The cheapest walks to far targets in direction
    d give the tree; a vertex is stabilized when targets at horizons h and 2h agree on
    its first step. The horizon starts at the trees' own and is halved until both
    targets are reachable from the whole window.
    """
    d1, d2 = tree1.direction, tree2.direction
    if not d1 - 1e-12 <= d <= d2 + 1e-12:
        raise ValueError(f"direction {d} lies outside [{d1}, {d2}]")
    if tree1.region != tree2.region or delta.region != tree1.region:
        raise BoxError("trees and delta must share a region")
    if on_tie not in ("raise", "flag"):
        raise ValueError("on_tie must be 'raise' or 'flag'")
    cost1 = _tree1_cost(tree1, delta)
    corner = tree1.window.corner
    free_only = math.isclose(d, d2, rel_tol=1e-12)
    h = int(horizon) if horizon is not None else max(tree1.horizon, tree2.horizon, 1)
    full = tree1.window.size
    picked, picked_h, score = None, h, 0
    while h >= 1:
        found = [
            _reachable_target(
                tree1, tree2, cost1, target_point(corner, d, hh), _search_width(hh, d, (d1, d2)), free_only
            )
            for hh in (h, 2 * h)
        ]
        if all(f is not None for f in found) and min(f[0] for f in found) > score:
            picked, picked_h, score = [f[1:] for f in found], h, min(f[0] for f in found)
        if score == full or horizon is not None:
            break
        h //= 2
    if picked is None:
        raise NotStabilizedError(f"no reachable far target for direction {d}")
    h = picked_h
    region = tree1.region
    out_box = Box(
        region.i_min,
        min(region.i_max, *(t[0] for t, _ in picked)),
        region.j_min,
        min(region.j_max, *(t[1] for t, _ in picked)),
    )
    firsts, ties = [], []
    for q, dom in picked:
        ti, tj = dom.box.local(q)
        _, first, tie = K.dag_backward_mincost(dom.step1, dom.step2, dom.excluded, dom.cost1, ti, tj)
        firsts.append(np.ascontiguousarray(first[: out_box.shape[0], : out_box.shape[1]]))
        ties.append(tie[: out_box.shape[0], : out_box.shape[1]])
    short, long = firsts
    tied = ties[0] | ties[1]
    if on_tie == "raise" and tied[out_box.slices(tree1.window)].any():
        raise TieError(f"tied cheapest walks from the window in direction {d}")
    stabilized = (short == long) & (long != K.NO_STEP) & ~tied
    reach = K.certified_reach(long, np.where(tied, K.NO_STEP, short).astype(np.uint8)) + level(out_box.origin)
    return GeodesicTree(
        direction=float(d),
        window=tree1.window,
        region=out_box,
        step=long,
        stabilized=stabilized,
        reach=reach,
        horizon=h,
        seed=tree1.seed,
        targets=tuple(t for t, _ in picked),
    )


def agreement(tree: GeodesicTree, truth: GeodesicTree, interior: int = 0) -> tuple[float, int]:
    """Fraction of window vertices, stabilized in both and at least ``interior`` from the
    window edge, where the two trees take the same step; and how many were compared."""
    win = tree.window
    inner = Box(win.i_min + interior, win.i_max - interior, win.j_min + interior, win.j_max - interior)
    a = tree.step[tree.region.slices(inner)]
    b = truth.step[truth.region.slices(inner)]
    ok = tree.stabilized[tree.region.slices(inner)] & truth.stabilized[truth.region.slices(inner)]
    n = int(ok.sum())
    return (float((a[ok] == b[ok]).mean()) if n else math.nan), n


# distance reconstruction


@dataclass
class DirectionWindow:
    """Inputs for one window ``(d1, d2)`` around d: its trees, delta, and ``W_{d2} - W_d``."""

    tree1: GeodesicTree
    tree2: GeodesicTree
    delta: DeltaField
    delta_to_d: DeltaField


def nested_windows(estimator: BusemannEstimator, d: float, depth: int = 3) -> list[DirectionWindow]:
    """Windows ``(d / 2^n, d 2^n)`` for n = 1..depth from a joint fit containing them all."""
    out = []
    for n in range(1, depth + 1):
        lo, hi = d / 2**n, d * 2**n
        b_lo, b_hi, b_d = estimator.busemann(lo), estimator.busemann(hi), estimator.busemann(d)
        out.append(
            DirectionWindow(
                estimator.tree(lo),
                estimator.tree(hi),
                DeltaField.from_busemann(b_lo, b_hi),
                DeltaField.from_busemann(b_d, b_hi),
            )
        )
    return out


def window_directions(d: float, depth: int = 3) -> list[float]:
    return sorted({d} | {d / 2**n for n in range(1, depth + 1)} | {d * 2**n for n in range(1, depth + 1)})


@dataclass
class DistanceTrace:
    """Reconstructed ``D_d(p; q)`` per window; ``inf`` where no switching walk joins them."""

    p: tuple[int, int]
    q: tuple[int, int]
    values: list[float]

    @property
    def value(self) -> float:
        return self.values[-1]

    @property
    def monotone(self) -> bool:
        v = self.values
        return all(b <= a + EQ_TOL for a, b in zip(v, v[1:]))


def _window_dags(windows: Sequence[DirectionWindow], excluded=None):
    cache = []
    for w in windows:
        region = w.tree1.region
        ex = np.zeros(region.shape, dtype=bool) if excluded is None else np.ascontiguousarray(excluded, dtype=bool)
        cost1 = _tree1_cost(w.tree1, w.delta)
        # minimise by maximising the negated cost; tree-2 steps are free
        gain_i = np.zeros(region.shape)
        gain_j = np.zeros(region.shape)
        s1, s2 = w.tree1.step, w.tree2.step
        only1_i = (s1 == K.STEP_I) & (s2 != K.STEP_I)
        only1_j = (s1 == K.STEP_J) & (s2 != K.STEP_J)
        gain_i[only1_i] = -cost1[only1_i]
        gain_j[only1_j] = -cost1[only1_j]
        cache.append((w, ex, gain_i, gain_j))
    return cache


def reconstruct_distance(
    windows: Sequence[DirectionWindow], p, q, excluded: np.ndarray | None = None, _cache=None
) -> DistanceTrace:
    """``D_d(p; q)`` through each direction window, innermost first.

    Within a window the cheapest walk under ``D_{d2}`` is found, then shifted by
    ``D_d = D_{d2} - (W_{d2} - W_d)(p) + (W_{d2} - W_d)(q)``. Wider windows allow more
    walks, so the sequence is non-increasing; this is asserted.
    """
    p, q = as_point(p), as_point(q)
    cache = _window_dags(windows, excluded) if _cache is None else _cache
    values = []
    for w, ex, gain_i, gain_j in cache:
        region = w.tree1.region
        check_in(region, p, q, what="window region")
        if q[0] < p[0] or q[1] < p[1] or ex[region.local(p)] or ex[region.local(q)]:
            values.append(PLUS_INFINITY)
            continue
        a, b = region.local(p)
        c, e = region.local(q)
        val, _ = K.dag_forward(w.tree1.step, w.tree2.step, ex, gain_i, gain_j, a, b, c, e)
        best = -float(val[-1, -1])
        if not np.isfinite(best):
            values.append(PLUS_INFINITY)
            continue
        values.append(best - w.delta_to_d(p) + w.delta_to_d(q))
    trace = DistanceTrace(p, q, values)
    if not trace.monotone:
        raise AssertionError(f"window sequence increased for {p}->{q}: {values}")
    return trace


def distance_reconstructor(windows: Sequence[DirectionWindow], excluded: np.ndarray | None = None):
    """Precompute per-window edge prices; returns ``f(p, q) -> DistanceTrace``."""
    cache = _window_dags(windows, excluded)
    return lambda p, q: reconstruct_distance(windows, p, q, excluded, _cache=cache)


# shock measure


@dataclass
class ShockValue:
    mu: float
    mu_prime: float


def rectangle_measure(values: np.ndarray, x_lo: int, x_hi: int, y_lo: int, y_hi: int) -> float:
    """``A(x_lo, y_lo) + A(x_hi, y_hi) - A(x_lo, y_hi) - A(x_hi, y_lo)`` on index ranges."""
    return float(values[x_lo, y_lo] + values[x_hi, y_hi] - values[x_lo, y_hi] - values[x_hi, y_lo])


def shock_measure(passage: np.ndarray, differential: np.ndarray, rect: tuple[int, int, int, int]) -> ShockValue:
    """Rectangle measure of the passage-time matrix and the same for ``-D_d``.

    Rows index start points along one level and columns end points along a later one,
    both in increasing transverse order; the two must agree since ``G + D_d`` splits
    into a function of the start plus a function of the end.
    """
    if passage.shape != differential.shape:
        raise ValueError("matrices must have the same shape")
    x_lo, x_hi, y_lo, y_hi = rect
    if not (0 <= x_lo <= x_hi < passage.shape[0] and 0 <= y_lo <= y_hi < passage.shape[1]):
        raise IndexError(f"rectangle {rect} outside the matrix")
    sub = passage[np.ix_([x_lo, x_hi], [y_lo, y_hi])]
    if not np.isfinite(sub).all():
        raise ValueError("rectangle touches an unreachable pair")
    return ShockValue(
        rectangle_measure(passage, x_lo, x_hi, y_lo, y_hi),
        rectangle_measure(-differential, x_lo, x_hi, y_lo, y_hi),
    )


def passage_matrix(field: WeightField, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    corner = (int(ends[:, 0].max()), int(ends[:, 1].max()))
    out = np.empty((len(starts), len(ends)))
    for k, s in enumerate(starts):
        g = passage_times_from(field, tuple(s), corner)
        rel = ends - s
        ok = (rel >= 0).all(axis=1)
        out[k] = -np.inf
        out[k, ok] = g[rel[ok, 0], rel[ok, 1]]
    return out


def differential_matrix(bfield: BusemannField, passage: np.ndarray, starts, ends) -> np.ndarray:
    ws = np.array([bfield.value(tuple(s)) for s in starts])
    we = np.array([bfield.value(tuple(e)) for e in ends])
    return (ws[:, None] - we[None, :]) - passage


def additive_residual(a: np.ndarray, b: np.ndarray) -> float:
    """Largest deviation of ``a - b`` from the form ``f(x) + g(y)``."""
    c = a - b
    return float(np.abs(c - c[:, :1] - c[:1, :] + c[0, 0]).max())


# end to end


@dataclass
class ExperimentConfig:
    seed: int = 0
    window: int = 40
    direction: float = 1.0
    depth: int = 3
    horizon: int | None = None
    max_doublings: int = 1
    min_coverage: float = 0.99
    pairs: int = 200
    rectangles: int = 200
    partition_rows: int = 10
    tolerance: float = EQ_TOL
    distribution: str = "exponential"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**data)
        if cfg.window < 4:
            raise ValueError("window must be at least 4")
        if cfg.depth < 1:
            raise ValueError("depth must be at least 1")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ReconstructionReport:
    config: dict
    config_hash: str
    horizon: int
    coverage: dict
    low_coverage: bool
    checks: dict
    metrics: dict
    errors: dict
    runtime: float

    @property
    def passed(self) -> bool:
        return (not self.low_coverage) and not self.errors and all(self.checks.values())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable))
        return path


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    raise TypeError(f"cannot serialise {type(v)}")


def _fraction(ok: int, n: int) -> float:
    return ok / n if n else math.nan


def _stage_partition(pair: BusemannEstimator, window: Box, cfg: ExperimentConfig, metrics: dict) -> bool:
    """Plateaus of delta against the tree-side classes, per certified column."""
    lo_lev, hi_lev = level(window.origin), level(window.corner)
    count = min(cfg.partition_rows, hi_lev - lo_lev - 1)
    rows = np.unique(np.linspace(lo_lev + 1, hi_lev - 1, num=count).astype(int))
    d1, d2 = sorted(pair.trees_)
    same = total = 0
    for lev in rows:
        prof = delta_row(pair.busemann(d1), pair.busemann(d2), int(lev), box=window)
        xs = prof.transverse[prof.certified]
        if not len(xs):
            continue
        tree_part = partition_from_trees(pair.tree(d1), pair.tree(d2), int(lev), box=window)
        agree = (plateau_partition(prof).shape_of(xs) == tree_part.shape_of(xs)).all(axis=1)
        same += int(agree.sum())
        total += len(xs)
    metrics.update(partition_agreement=_fraction(same, total), partition_columns=total)
    return total > 0 and same / total >= 0.99


def _stage_chaining(pair: BusemannEstimator, window: Box, cfg: ExperimentConfig, metrics: dict) -> bool:
    """Per-level profiles, each shifted arbitrarily, glued back by anchors."""
    d1, d2 = sorted(pair.trees_)
    delta = DeltaField.from_busemann(pair.busemann(d1), pair.busemann(d2))
    lo_lev, hi_lev = level(window.origin), level(window.corner)
    margin = cfg.window // 4
    profiles = {}
    for lev in range(lo_lev + margin, hi_lev - margin + 1):
        prof = delta.row(lev, box=window)
        profiles[lev] = DeltaProfile(lev, prof.points, prof.values - prof.values[0], prof.certified)
    chained, anchors = chain_rows(pair.tree(d1), pair.tree(d2), profiles)
    gap = chained.values - delta.values
    gap = gap[np.isfinite(gap)]
    metrics.update(chain_residual=float(np.abs(gap - gap[0]).max()), anchors=len(anchors))
    return metrics["chain_residual"] <= cfg.tolerance


def _stage_tree(pair: BusemannEstimator, field: WeightField, window: Box, cfg: ExperimentConfig, metrics: dict) -> dict:
    d1, d2 = sorted(pair.trees_)
    t1, t2 = pair.tree(d1), pair.tree(d2)
    delta = DeltaField.from_busemann(pair.busemann(d1), pair.busemann(d2))
    rec = reconstruct_tree(t1, t2, delta, cfg.direction, on_tie="flag")
    truth = BusemannEstimator(directions=(cfg.direction,), horizon=rec.horizon, max_doublings=0).fit(field, window)
    frac, n = agreement(rec, truth.tree(cfg.direction))
    metrics.update(tree_agreement=frac, tree_compared=n, tree_coverage=rec.coverage, tree_horizon=rec.horizon)
    degenerate = reconstruct_tree(t1, t2, delta, d2, on_tie="flag")
    frac2, n2 = agreement(degenerate, t2)
    metrics.update(degenerate_agreement=frac2, degenerate_compared=n2)
    return {"tree": n > 0 and frac >= 0.99, "degenerate_tree": n2 > 0 and frac2 == 1.0}


def _stage_distance(est: BusemannEstimator, window: Box, cfg: ExperimentConfig, rng, metrics: dict) -> bool:
    """Window-by-window ``D_d`` against ``W_d - G`` on pairs whose geodesic is a switching walk."""
    field = est.field_
    windows = nested_windows(est, cfg.direction, cfg.depth)
    excluded = np.zeros(est.region_.shape, dtype=bool)
    for w in windows:
        excluded |= ~(w.tree1.stabilized & w.tree2.stabilized)
    recon = distance_reconstructor(windows, excluded)
    dags = [build_switching_dag(w.tree1, w.tree2, field, excluded) for w in windows]
    bd = est.busemann(cfg.direction)
    pts = list(window.points())
    worst, matched, monotone, tried = 0.0, 0, 0, 0
    for _ in range(cfg.pairs):
        p, q = sorted((pts[k] for k in rng.choice(len(pts), 2, replace=False)), key=level)
        if q[0] < p[0] or q[1] < p[1] or excluded[est.region_.local(p)] or excluded[est.region_.local(q)]:
            continue
        tried += 1
        trace = recon(p, q)
        monotone += trace.monotone
        g = passage_time(field, p, q)
        if any(abs(modified_distance(dag, p, q) - g) <= cfg.tolerance for dag in dags):
            matched += 1
            worst = max(worst, abs(trace.value - (bd(p, q) - g)))
    metrics.update(distance_pairs=tried, distance_matched=matched, distance_max_error=worst)
    return matched > 0 and worst <= cfg.tolerance and monotone == tried


def shock_sweep(est: BusemannEstimator, window: Box, cfg: ExperimentConfig, rng, metrics: dict) -> bool:
    lo_lev, hi_lev = level(window.origin), level(window.corner)
    s_lev = lo_lev + (hi_lev - lo_lev) // 4
    t_lev = hi_lev - (hi_lev - lo_lev) // 4
    starts, ends = row_points(window, s_lev), row_points(window, t_lev)
    gm = passage_matrix(est.field_, starts, ends)
    dm = differential_matrix(est.busemann(cfg.direction), gm, starts, ends)
    gap, lowest, count = 0.0, math.inf, 0
    for _ in range(cfg.rectangles):
        xs = np.sort(rng.choice(len(starts), 2, replace=False))
        ys = np.sort(rng.choice(len(ends), 2, replace=False))
        try:
            sv = shock_measure(gm, dm, (xs[0], xs[1], ys[0], ys[1]))
        except ValueError:
            continue
        count += 1
        gap = max(gap, abs(sv.mu - sv.mu_prime))
        lowest = min(lowest, sv.mu)
    reach = np.isfinite(gm).all(axis=0)
    residual = additive_residual(gm[:, reach], -dm[:, reach]) if reach.any() else math.nan
    metrics.update(rectangles=count, shock_gap=gap, shock_min=lowest if count else math.nan, additive_residual=residual)
    return count > 0 and gap <= cfg.tolerance and lowest >= -cfg.tolerance and residual <= cfg.tolerance


def end_to_end(config: ExperimentConfig) -> ReconstructionReport:
    """Sample, fit, reconstruct, and score every stage against the weights.

    A stage that raises is recorded as failed with its message under ``errors``.
    """
    t0 = time.perf_counter()
    cfg = config
    rng = np.random.default_rng([cfg.seed, 1])
    window = Box.from_corner((0, 0), (cfg.window, cfg.window))
    field = sample_field(window, cfg.seed, cfg.distribution)
    fit = dict(horizon=cfg.horizon, max_doublings=cfg.max_doublings, min_coverage=cfg.min_coverage)
    pair = BusemannEstimator(directions=(cfg.direction / 2, cfg.direction * 2), **fit).fit(field, window)
    est = BusemannEstimator(directions=window_directions(cfg.direction, cfg.depth), **fit).fit(field, window)
    checks, metrics, errors = {}, {}, {}

    def run(name, fn, *args):
        try:
            out = fn(*args)
        except (ReconError, AssertionError, ValueError) as exc:
            errors[name] = f"{type(exc).__name__}: {exc}"
            out = False
        if isinstance(out, dict):
            checks.update(out)
        else:
            checks[name] = out

    run("partition", _stage_partition, pair, window, cfg, metrics)
    run("chaining", _stage_chaining, pair, window, cfg, metrics)
    run("tree", _stage_tree, pair, est.field_, window, cfg, metrics)
    run("distance", _stage_distance, est, window, cfg, rng, metrics)
    run("shock", shock_sweep, est, window, cfg, rng, metrics)
    coverage = {str(k): v for k, v in {**pair.coverage_, **est.coverage_}.items()}
    return ReconstructionReport(
        config=cfg.to_dict(),
        config_hash=cfg.digest(),
        horizon=est.horizon_,
        coverage=coverage,
        low_coverage=bool(pair.low_coverage_ or est.low_coverage_),
        checks={k: bool(v) for k, v in checks.items()},
        metrics=metrics,
        errors=errors,
        runtime=time.perf_counter() - t0,
    )
