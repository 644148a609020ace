"""Semi-infinite geodesic trees, Busemann values and competition interfaces.

Everything is computed by coalescence toward far targets. A tree in direction ``d`` is
the argmax-step field of a backward DP toward a target roughly ``horizon * (1, d)/(1+d)``
beyond the window corner; the same computation at half the horizon supplies the
per-vertex stabilization flag (first steps agree) and the certified reach (levels over
which the two rays stay identical). All directions fitted together share one target
level, which makes ray ordering across directions exact on the common region.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels as K
from ._validation import (
    EQ_TOL,
    MINUS_INFINITY,
    PLUS_INFINITY,
    Box,
    BoxError,
    NotStabilizedError,
    TieError,
    as_point,
    check_direction,
    check_in,
    finite_or_none,
    level,
)
from .lpp import WeightField, passage_times_from, sample_field

TREE_FORMAT_VERSION = 1
MIN_HORIZON = 256


def target_offset(d: float, horizon: int) -> tuple[int, int]:
    """Lattice offset of exactly ``horizon`` steps with slope close to ``d``."""
    horizon = int(horizon)
    di = int(round(horizon / (1.0 + d)))
    return (di, horizon - di)


def target_point(corner, d: float, horizon: int) -> tuple[int, int]:
    di, dj = target_offset(d, horizon)
    return (corner[0] + di, corner[1] + dj)


@dataclass
class GeodesicTree:
    """Discrete geodesic tree of one direction, stored on ``region`` (which contains ``window``).

    ``step`` holds each vertex's next ray step (kernel step codes), ``stabilized`` whether
    that step agrees with the half-horizon computation, ``reach`` the absolute level up to
    which the two rays coincide. ``full_step`` optionally keeps the long-horizon steps on
    the whole box below the far target (``full_box``).
    """

    direction: float
    window: Box
    region: Box
    step: np.ndarray = dc_field(repr=False)
    stabilized: np.ndarray = dc_field(repr=False)
    reach: np.ndarray = dc_field(repr=False)
    horizon: int = 0
    seed: int | None = None
    targets: tuple = ()
    full_box: Box | None = None
    full_step: np.ndarray | None = dc_field(default=None, repr=False)

    def _local(self, p) -> tuple[int, int]:
        p = as_point(p)
        check_in(self.region, p, what="tree region")
        return self.region.local(p)

    def parent(self, p) -> tuple[int, int] | None:
        a, b = self._local(p)
        s = self.step[a, b]
        if s == K.STEP_I:
            q = (p[0] + 1, p[1])
        elif s == K.STEP_J:
            q = (p[0], p[1] + 1)
        else:
            return None
        return q if self.region.contains(q) else None

    def is_stabilized(self, p) -> bool:
        return bool(self.stabilized[self._local(p)])

    def certified_reach(self, p) -> int:
        return int(self.reach[self._local(p)])

    def ray(self, p, until_level: int | None = None, certified: bool = False) -> np.ndarray:
        """Points of the ray from p, stopping at ``until_level``, the region edge, or the
        certified reach when ``certified`` is set."""
        a, b = self._local(p)
        top = level(self.region.corner) if until_level is None else int(until_level)
        if certified:
            top = min(top, int(self.reach[a, b]))
        steps = max(0, top - level(p))
        path = K.follow(self.step, a, b, steps)
        return path + np.array(self.region.origin, dtype=np.int64)

    def position_at(self, lev: int) -> np.ndarray:
        """Row i where each region vertex's ray crosses absolute level ``lev`` (-1 if unknown)."""
        return K.ray_position_at(self.step, int(lev) - level(self.region.origin))

    def window_mask(self) -> np.ndarray:
        mask = np.zeros(self.region.shape, dtype=bool)
        mask[self.region.slices(self.window)] = True
        return mask

    @property
    def coverage(self) -> float:
        return float(self.stabilized[self.region.slices(self.window)].mean())

    def header(self) -> dict:
        return {
            "direction": self.direction,
            "window": self.window.to_dict(),
            "region": self.region.to_dict(),
            "horizon": self.horizon,
            "seed": self.seed,
            "targets": [list(t) for t in self.targets],
            "format_version": TREE_FORMAT_VERSION,
        }


def save_tree(tree: GeodesicTree, path) -> Path:
    """Packed per-vertex code (two step bits plus a stabilized bit) and a JSON header."""
    path = Path(path)
    code = (tree.step & 3) | (tree.stabilized.astype(np.uint8) << 2)
    with open(path, "wb") as fh:
        np.savez_compressed(
            fh, code=code, reach=tree.reach, header=np.array(json.dumps(tree.header(), sort_keys=True))
        )
    return path


def load_tree(path) -> GeodesicTree:
    with np.load(Path(path)) as npz:
        header = json.loads(str(npz["header"]))
        code = np.array(npz["code"])
        reach = np.array(npz["reach"])
    if header["format_version"] != TREE_FORMAT_VERSION:
        raise ValueError("unsupported tree format")
    return GeodesicTree(
        direction=header["direction"],
        window=Box.from_dict(header["window"]),
        region=Box.from_dict(header["region"]),
        step=(code & 3).astype(np.uint8),
        stabilized=(code >> 2).astype(bool),
        reach=reach,
        horizon=header["horizon"],
        seed=header["seed"],
        targets=tuple(tuple(t) for t in header["targets"]),
    )


@dataclass
class BusemannField:
    """``W_d(v; ref)`` on a region, from the long horizon, with the short-horizon copy kept
    for certification."""

    direction: float
    ref: tuple[int, int]
    region: Box
    values: np.ndarray = dc_field(repr=False)
    values_short: np.ndarray = dc_field(repr=False)

    def value(self, p) -> float:
        p = as_point(p)
        check_in(self.region, p, what="Busemann region")
        return float(self.values[self.region.local(p)])

    def __call__(self, p, q) -> float:
        """W_d(p; q)."""
        return self.value(p) - self.value(q)

    @property
    def certified(self) -> np.ndarray:
        """Per-vertex certification of the value relative to the reference point."""
        return np.abs(self.values - self.values_short) <= EQ_TOL

    def certified_pair(self, p, q) -> bool:
        a, b = self.region.local(as_point(p)), self.region.local(as_point(q))
        long = self.values[a] - self.values[b]
        short = self.values_short[a] - self.values_short[b]
        return abs(long - short) <= EQ_TOL


class BusemannEstimator(BaseEstimator):
    """Fit geodesic trees and Busemann fields for several directions on one window.

    The horizon defaults to 8 window diameters and is doubled (at most ``max_doublings``
    times) until every direction has ``min_coverage`` of its window stabilized. When the
    cap is hit the fit still completes and ``low_coverage_`` is set.
    """

    def __init__(
        self,
        directions: Sequence[float] = (1.0,),
        horizon: int | None = None,
        max_doublings: int = 1,
        min_coverage: float = 0.99,
    ):
        self.directions = directions
        self.horizon = horizon
        self.max_doublings = max_doublings
        self.min_coverage = min_coverage

    def fit(self, field: WeightField, window: Box) -> "BusemannEstimator":
        dirs = [check_direction(d) for d in self.directions]
        if len(set(dirs)) != len(dirs):
            raise ValueError("directions must be distinct")
        if self.horizon is not None and int(self.horizon) < 1:
            raise ValueError("horizon must be a positive integer")
        check_in(field.box, window.origin, window.corner, what="field box")
        horizon = int(self.horizon) if self.horizon is not None else 8 * window.diameter
        for attempt in range(int(self.max_doublings) + 1):
            field, trees, fields = _fit_at(field, window, dirs, horizon)
            coverage = {d: t.coverage for d, t in trees.items()}
            if min(coverage.values()) >= self.min_coverage or attempt == self.max_doublings:
                break
            horizon *= 2
        self.field_ = field
        self.window_ = window
        self.trees_ = trees
        self.busemann_ = fields
        self.horizon_ = horizon
        self.coverage_ = coverage
        self.low_coverage_ = min(coverage.values()) < self.min_coverage
        self.region_ = next(iter(trees.values())).region
        return self

    def tree(self, d: float) -> GeodesicTree:
        return self.trees_[self._key(d)]

    def busemann(self, d: float) -> BusemannField:
        return self.busemann_[self._key(d)]

    def _key(self, d: float) -> float:
        for k in self.trees_:
            if math.isclose(k, d, rel_tol=1e-12):
                return k
        raise KeyError(f"direction {d} was not fitted; have {sorted(self.trees_)}")


def _fit_at(field: WeightField, window: Box, dirs: list[float], horizon: int):
    corner = window.corner
    short = {d: target_point(corner, d, horizon) for d in dirs}
    long = {d: target_point(corner, d, 2 * horizon) for d in dirs}
    region = Box(
        window.i_min, min(t[0] for t in short.values()), window.j_min, min(t[1] for t in short.values())
    )
    need = Box(window.i_min, max(t[0] for t in long.values()), window.j_min, max(t[1] for t in long.values()))
    field = field.extended(need)
    rn, rm = region.shape
    ref = window.origin
    trees, fields = {}, {}
    for d in dirs:
        h_long, s_long, tie_long = K.backward_dp(field.sub(Box(ref[0], long[d][0], ref[1], long[d][1])))
        h_short, s_short, tie_short = K.backward_dp(field.sub(Box(ref[0], short[d][0], ref[1], short[d][1])))
        if tie_long[:rn, :rm].any() or tie_short[:rn, :rm].any():
            raise TieError(f"tied geodesic steps inside the region for direction {d}")
        long_box = Box(ref[0], long[d][0], ref[1], long[d][1])
        step = np.ascontiguousarray(s_long[:rn, :rm])
        step_short = np.ascontiguousarray(s_short[:rn, :rm])
        reach = K.certified_reach(step, step_short) + level(region.origin)
        trees[d] = GeodesicTree(
            direction=d,
            window=window,
            region=region,
            step=step,
            stabilized=step == step_short,
            reach=reach,
            horizon=horizon,
            seed=field.seed,
            targets=(short[d], long[d]),
            full_box=long_box,
            full_step=s_long,
        )
        vals = h_long[:rn, :rm]
        vals_short = h_short[:rn, :rm]
        fields[d] = BusemannField(d, ref, region, vals - vals[0, 0], vals_short - vals_short[0, 0])
    return field, trees, fields


def build_tree(field: WeightField, d: float, window: Box, horizon: int | None = None) -> GeodesicTree:
    """Single-direction convenience wrapper around :class:`BusemannEstimator`."""
    return BusemannEstimator(directions=(d,), horizon=horizon).fit(field, window).tree(d)


class Ray(NamedTuple):
    path: np.ndarray
    certified_length: int


def semi_infinite_ray(field: WeightField, p, d: float, horizon: int) -> Ray:
    """Geodesic from p toward the doubled-horizon target, with the prefix it shares with
    the geodesic toward the single-horizon target marked as certified."""
    p = as_point(p)
    d = check_direction(d)
    short, long = target_point(p, d, horizon), target_point(p, d, 2 * horizon)
    check_in(field.box, p, long, what="field box")
    paths = []
    for t in (short, long):
        _, step, tie = K.backward_dp(field.sub(Box(p[0], t[0], p[1], t[1])))
        local = K.follow(step, 0, 0, level(t) - level(p))
        if tie[local[:-1, 0], local[:-1, 1]].any():
            raise TieError(f"tied geodesic from {p} toward {t}")
        paths.append(local + np.array(p, dtype=np.int64))
    a, b = paths
    k = min(len(a), len(b))
    same = np.all(a[:k] == b[:k], axis=1)
    certified = k if same.all() else int(np.argmin(same))
    if certified < 2:
        raise NotStabilizedError(f"rays from {p} disagree at the first step")
    return Ray(b, certified)


class BusemannValue(NamedTuple):
    value: float
    certified: bool


def busemann_value(field: WeightField, d: float, p, q, horizon: int | None = None, strict: bool = True):
    """``G(p; r) - G(q; r)`` for a far target r, certified against half the horizon.

    The default horizon is 8 spans of the pair but never below ``MIN_HORIZON``: geodesics
    from nearby points meet within a few steps whatever the target, so agreement between
    two short horizons says nothing about the direction-d limit.
    """
    p, q = as_point(p), as_point(q)
    d = check_direction(d)
    if p == q:
        return BusemannValue(0.0, True)
    lo = (min(p[0], q[0]), min(p[1], q[1]))
    hi = (max(p[0], q[0]), max(p[1], q[1]))
    if horizon is None:
        horizon = max(8 * max(hi[0] - lo[0] + 1, hi[1] - lo[1] + 1), MIN_HORIZON)
    horizon = int(horizon)
    vals = []
    for h in (horizon, 2 * horizon):
        t = target_point(hi, d, h)
        check_in(field.box, lo, t, what="field box")
        g, _, _ = K.backward_dp(field.sub(Box(lo[0], t[0], lo[1], t[1])))
        vals.append(g[p[0] - lo[0], p[1] - lo[1]] - g[q[0] - lo[0], q[1] - lo[1]])
    ok = abs(vals[0] - vals[1]) <= EQ_TOL
    if strict and not ok:
        raise NotStabilizedError(f"Busemann value {p}->{q} changed by {abs(vals[0] - vals[1]):.3g}")
    return BusemannValue(float(vals[1]), ok)


class VariationalResult(NamedTuple):
    residual: float
    argmax: tuple[int, int]
    certified: bool


def variational_check(bfield: BusemannField, field: WeightField, p, level_t: int) -> VariationalResult:
    """``W(p; ref) - max_z {G(p; z) + W(z; ref)}`` over z on ``level_t`` inside the region."""
    p = as_point(p)
    check_in(bfield.region, p, what="Busemann region")
    if level_t < level(p):
        raise ValueError("level_t must not precede the level of p")
    if level_t > level(bfield.region.corner):
        raise BoxError("level_t beyond the Busemann region")
    corner = bfield.region.corner
    g = passage_times_from(field, p, corner)
    a0, b0 = bfield.region.local(p)
    k = level_t - level(p)
    ii = np.arange(max(0, k - (g.shape[1] - 1)), min(k, g.shape[0] - 1) + 1)
    jj = k - ii
    cand = g[ii, jj] + bfield.values[a0 + ii, b0 + jj]
    best = int(np.argmax(cand))
    z = (p[0] + int(ii[best]), p[1] + int(jj[best]))
    residual = float(bfield.values[a0, b0] - cand[best])
    cert = bool(bfield.certified[a0, b0] and bfield.certified[bfield.region.local(z)])
    return VariationalResult(residual, z, cert)


@dataclass
class CompetitionInterface:
    """Per-level boundary (transverse coordinate) of the points whose rays pass weakly left of ``apex``."""

    apex: tuple[int, int]
    direction: float
    levels: np.ndarray
    boundary: np.ndarray
    flagged: np.ndarray

    def supremum(self, lo: int, hi: int) -> float:
        sel = (self.levels >= lo) & (self.levels <= hi)
        if not sel.any():
            raise ValueError("no interface levels in the requested range")
        return float(np.max(self.boundary[sel]))

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = ["level,boundary,flagged"]
        for lev, b, f in zip(self.levels, self.boundary, self.flagged):
            v = finite_or_none(b)
            lines.append(f"{lev},{'' if v is None else int(v)},{int(f)}")
        path.write_text("\n".join(lines) + "\n")
        return path


def competition_interface(tree: GeodesicTree, q, levels: Sequence[int] | None = None) -> CompetitionInterface:
    """Boundary at each level below q: the largest transverse coordinate whose ray passes
    weakly left of q at ``level(q)``; -inf if none do, +inf if all region points do.
    Vertices whose certified reach stops short of ``level(q)`` still take part (their long
    horizon ray is exact for the fitted target) and are counted in ``flagged``."""
    q = as_point(q)
    check_in(tree.region, q, what="tree region")
    lq = level(q)
    base = level(tree.region.origin)
    if levels is None:
        levels = range(base, lq)
    levels = np.array(sorted(int(v) for v in levels), dtype=np.int64)
    if len(levels) and (levels[0] < base or levels[-1] >= lq):
        raise ValueError("interface levels must lie in [level(region origin), level(q))")
    pos = tree.position_at(lq)
    iq = q[0] - tree.region.i_min
    n, m = tree.region.shape
    boundary = np.empty(len(levels), dtype=np.float64)
    flagged = np.zeros(len(levels), dtype=np.int64)
    for k, lev in enumerate(levels):
        loc = lev - base
        ii = np.arange(max(0, loc - (m - 1)), min(loc, n - 1) + 1)
        jj = loc - ii
        where = pos[ii, jj]
        known = where >= 0
        left = known & (where >= iq)
        flagged[k] = int((~known).sum() + (tree.reach[ii, jj] < lq).sum())
        x = jj - ii
        if not left.any():
            boundary[k] = MINUS_INFINITY
        elif left[known].all() and known.all():
            boundary[k] = PLUS_INFINITY
        else:
            boundary[k] = float(x[left].max())
        # rays are ordered, so the left set must be a down-set in x
        if left.any() and (known & ~left & (x < x[left].max())).any():
            flagged[k] += 1
    return CompetitionInterface(q, tree.direction, levels, boundary, flagged)


def interface_escape_stat(
    seeds: Sequence[int],
    q,
    d_list: Sequence[float],
    level_window: tuple[int, int],
    window_side: int = 41,
    horizon: int | None = None,
) -> dict:
    """Median over seeds of the interface supremum over ``level_window`` for each direction.

    The window is the square of side ``window_side`` whose upper corner is q.
    """
    q = as_point(q)
    d_list = [check_direction(d) for d in d_list]
    if any(b <= a for a, b in zip(d_list, d_list[1:])):
        raise ValueError("d_list must be increasing")
    lo, hi = level_window
    window = Box(q[0] - window_side + 1, q[0], q[1] - window_side + 1, q[1])
    sups = {d: [] for d in d_list}
    flagged = {d: 0 for d in d_list}
    for seed in seeds:
        base = sample_field(window, seed)
        for d in d_list:
            est = BusemannEstimator(directions=(d,), horizon=horizon, max_doublings=0).fit(base, window)
            ci = competition_interface(est.tree(d), q, range(lo, hi + 1))
            sups[d].append(ci.supremum(lo, hi))
            flagged[d] += int(ci.flagged.sum())
    medians = {d: float(np.median(sups[d])) for d in d_list}
    return {"median": medians, "suprema": {d: np.array(v) for d, v in sups.items()}, "flagged": flagged}
