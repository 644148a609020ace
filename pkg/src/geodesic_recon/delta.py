"""The Busemann difference profile, its plateaus, and the matching continuum sampler.

On a fixed level, ``delta = W_{d2} - W_{d1}`` is non-decreasing in the transverse
coordinate and constant exactly on classes of points whose four rays share a vertex.
The continuum side couples two drifted Brownian motions by reflection; its running-max
structure is what the lattice increments are compared against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from . import _kernels as K
from ._validation import (
    EQ_TOL,
    Box,
    BoxError,
    MonotonicityError,
    NotFoundError,
    as_point,
    check_in,
    level,
)
from .busemann import BusemannField, GeodesicTree

_FAR = np.int64(1) << np.int64(60)


def row_points(box: Box, lev: int) -> np.ndarray:
    """Points of ``box`` on a level, ordered by increasing transverse coordinate (j - i)."""
    i_hi = min(box.i_max, lev - box.j_min)
    i_lo = max(box.i_min, lev - box.j_max)
    if i_lo > i_hi:
        raise BoxError(f"level {lev} does not meet {box}")
    ii = np.arange(i_hi, i_lo - 1, -1, dtype=np.int64)
    return np.stack([ii, lev - ii], axis=1)


@dataclass
class DeltaProfile:
    level: int
    points: np.ndarray = dc_field(repr=False)
    values: np.ndarray = dc_field(repr=False)
    certified: np.ndarray = dc_field(repr=False)

    @property
    def transverse(self) -> np.ndarray:
        return self.points[:, 1] - self.points[:, 0]


def delta_row(b1: BusemannField, b2: BusemannField, lev: int, box: Box | None = None) -> DeltaProfile:
    """``W_{d2}(v; ref) - W_{d1}(v; ref)`` along one level, checked non-decreasing.

    A column is certified when both Busemann differences to each neighbour agree across
    horizons, which is all the plateau structure depends on.
    """
    if b1.ref != b2.ref or b1.region != b2.region:
        raise ValueError("Busemann fields must share reference point and region")
    if not b1.direction < b2.direction:
        raise ValueError("b1 must have the smaller direction")
    box = b1.region if box is None else box
    pts = row_points(box, lev)
    loc = pts - np.array(b1.region.origin)
    a, b = loc[:, 0], loc[:, 1]
    vals = b2.values[a, b] - b1.values[a, b]
    short = b2.values_short[a, b] - b1.values_short[a, b]
    inc_ok = np.abs(np.diff(vals) - np.diff(short)) <= EQ_TOL
    cert = np.ones(len(pts), dtype=bool)
    if len(pts) > 1:
        cert[:-1] &= inc_ok
        cert[1:] &= inc_ok
    drops = np.diff(vals) < -EQ_TOL
    if drops.any():
        k = int(np.argmax(drops))
        raise MonotonicityError(f"delta decreases between {tuple(pts[k])} and {tuple(pts[k + 1])}")
    return DeltaProfile(lev, pts, vals, cert)


@dataclass
class PlateauPartition:
    """Maximal intervals (in transverse coordinate) on which the profile is constant."""

    level: int
    intervals: list[tuple[int, int]]
    levels: list[float] | None = None

    def labels(self, xs: np.ndarray) -> np.ndarray:
        """Index of the interval containing each transverse coordinate."""
        lows = np.array([lo for lo, _ in self.intervals])
        return np.searchsorted(lows, xs, side="right") - 1

    def shape_of(self, xs: np.ndarray) -> np.ndarray:
        """For each coordinate, the (lo, hi) of its interval as a (k, 2) array."""
        iv = np.array(self.intervals, dtype=np.int64)
        return iv[self.labels(xs)]

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "intervals": [[int(a), int(b)] for a, b in self.intervals],
            "levels": None if self.levels is None else [float(v) for v in self.levels],
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json()))
        return path


def plateau_partition(profile: DeltaProfile, tol: float = EQ_TOL) -> PlateauPartition:
    xs = profile.transverse
    vals = profile.values
    intervals, levels = [], []
    start = 0
    for k in range(1, len(vals) + 1):
        if k == len(vals) or abs(vals[k] - vals[start]) > tol:
            intervals.append((int(xs[start]), int(xs[k - 1])))
            levels.append(float(vals[start]))
            start = k
    for a, b in zip(levels, levels[1:]):
        if not b > a + tol:
            raise MonotonicityError("plateau levels must increase strictly left to right")
    return PlateauPartition(profile.level, intervals, levels)


def _ray_box(tree1: GeodesicTree, tree2: GeodesicTree) -> Box:
    """Where both trees' steps are known: the overlap of their long-horizon boxes if kept."""
    if tree1.full_box is None or tree2.full_box is None:
        return tree1.region
    a, b = tree1.full_box, tree2.full_box
    return Box(a.i_min, min(a.i_max, b.i_max), a.j_min, min(a.j_max, b.j_max))


def _rays(tree: GeodesicTree, pts: np.ndarray, box: Box | None = None) -> np.ndarray:
    """Row index (local to ``box``, default the region) of each point's ray at every level
    of the box; -1 outside."""
    if box is None or box == tree.region or tree.full_step is None:
        box, step = tree.region, tree.step
    else:
        step = np.ascontiguousarray(tree.full_step[: box.shape[0], : box.shape[1]])
    loc = pts - np.array(box.origin)
    reach = np.full(box.shape, _FAR, dtype=np.int64)
    top = box.shape[0] + box.shape[1] - 2
    return K.ray_rows(step, reach, loc[:, 0].copy(), loc[:, 1].copy(), top)


def _both_rays(tree1: GeodesicTree, tree2: GeodesicTree, pts: np.ndarray):
    box = _ray_box(tree1, tree2)
    return _rays(tree1, pts, box), _rays(tree2, pts, box), box


def _share_vertex(r1p, r2p, r1q, r2q) -> np.ndarray:
    """Whether the four rays (rows per level, -1 undefined) have a common vertex."""
    ok = (r1p >= 0) & (r1p == r2p) & (r1p == r1q) & (r1p == r2q)
    return ok.any(axis=-1)


def equivalent(tree1: GeodesicTree, tree2: GeodesicTree, p, q) -> bool:
    """Whether one vertex lies on both trees' rays from p and from q."""
    p, q = as_point(p), as_point(q)
    if tree1.region != tree2.region:
        raise ValueError("trees must share their region")
    check_in(tree1.region, p, q, what="tree region")
    if p == q:
        return True
    pts = np.array([p, q], dtype=np.int64)
    r1, r2, _ = _both_rays(tree1, tree2, pts)
    return bool(_share_vertex(r1[0], r2[0], r1[1], r2[1]))


def partition_from_trees(tree1: GeodesicTree, tree2: GeodesicTree, lev: int, box: Box | None = None) -> PlateauPartition:
    """Equivalence classes of one level as intervals, computed from the two trees only."""
    if tree1.region != tree2.region:
        raise ValueError("trees must share their region")
    box = tree1.window if box is None else box
    pts = row_points(box, lev)
    xs = pts[:, 1] - pts[:, 0]
    if len(pts) == 1:
        return PlateauPartition(lev, [(int(xs[0]), int(xs[0]))])
    r1, r2, _ = _both_rays(tree1, tree2, pts)
    adjacent = _share_vertex(r1[:-1], r2[:-1], r1[1:], r2[1:])
    intervals = []
    start = 0
    for k in range(len(pts)):
        if k == len(pts) - 1 or not adjacent[k]:
            intervals.append((start, k))
            start = k + 1
    for a, b in intervals:
        # ordering makes classes intervals; a chain whose ends are not equivalent is a bug
        if b > a + 1 and not _share_vertex(r1[a], r2[a], r1[b], r2[b]):
            raise AssertionError(f"class {tuple(pts[a])}..{tuple(pts[b])} is not an interval")
    return PlateauPartition(lev, [(int(xs[a]), int(xs[b])) for a, b in intervals])


def cross_time_anchor(
    tree1: GeodesicTree,
    tree2: GeodesicTree,
    s_row: int,
    t_row: int,
    search_width: int,
    center=None,
    box: Box | None = None,
) -> tuple[tuple[int, int], tuple[int, int]]:
    """Points ``x`` on level ``s_row`` and ``y`` on level ``t_row`` with x ~ y, both in
    ``box`` (default: the window).

    Scans x outward from ``center`` (default: middle of the row) over ``search_width``
    columns each side; candidates y are where x's rays cross ``t_row``.
    """
    if t_row < s_row:
        s_row, t_row = t_row, s_row
    box = tree1.window if box is None else box
    row = row_points(box, s_row)
    if s_row == t_row:
        c = row[len(row) // 2] if center is None else np.array(as_point(center))
        return (tuple(int(v) for v in c), tuple(int(v) for v in c))
    if search_width <= 0:
        raise NotFoundError("empty search range")
    xs = row[:, 1] - row[:, 0]
    c = len(row) // 2 if center is None else int(np.argmin(np.abs(xs - (as_point(center)[1] - as_point(center)[0]))))
    order = sorted(range(max(0, c - search_width), min(len(row), c + search_width + 1)), key=lambda k: (abs(k - c), k))
    base = level(tree1.region.origin)
    cand_pts = row[order]
    r1, r2, rbox = _both_rays(tree1, tree2, cand_pts)
    t_loc = t_row - base
    for k in range(len(order)):
        for rr in (r1[k], r2[k]):
            i_loc = rr[t_loc] if t_loc < len(rr) else -1
            if i_loc < 0:
                continue
            y = (int(i_loc) + rbox.i_min, t_row - int(i_loc) - rbox.i_min)
            if box.contains(y) and equivalent(tree1, tree2, tuple(cand_pts[k]), y):
                return (tuple(int(v) for v in cand_pts[k]), y)
    raise NotFoundError(f"no anchor between levels {s_row} and {t_row} within {search_width} columns")


# continuum reference


@dataclass
class HorizonSample:
    """Coupled two-sided paths on a grid; row r of each array is replica r.

    ``b2 = b1 + sup_{y<=x}(b3 - b1) - sup_{y<=0}(b3 - b1)`` with the left sup truncated
    at the burn-in edge. ``flagged[r]`` marks replicas whose truncated sup at x = 0 is
    attained inside the burn-in margin. ``delta`` holds ``b2 - b1`` computed directly, so
    its flat stretches are exactly flat.
    """

    grid: np.ndarray
    b1: np.ndarray = dc_field(repr=False)
    b2: np.ndarray = dc_field(repr=False)
    b3: np.ndarray = dc_field(repr=False)
    flagged: np.ndarray = dc_field(repr=False)
    delta: np.ndarray = dc_field(repr=False, default=None)
    theta: tuple[float, float] = (0.0, 0.0)
    seed: int = 0


BURN_IN = 0.25
# the left supremum of B3 - B1 lies beyond length L with probability about
# exp(-(theta2 - theta1)^2 L / 2); this factor makes that about e^-15
LEFT_TAIL = 30.0


def _left_length(theta1: float, theta2: float, span: float) -> float:
    return max(BURN_IN * span, LEFT_TAIL / (theta2 - theta1) ** 2)


def _two_sided(rng: np.random.Generator, n_left: int, n_right: int, h: float, drift: float, var: float) -> np.ndarray:
    """Drifted two-sided Brownian path at ``-n_left*h .. n_right*h``, zero at the origin."""
    sd = math.sqrt(var * h)
    right = np.cumsum(drift * h + sd * rng.standard_normal(n_right))
    left = np.cumsum(-drift * h + sd * rng.standard_normal(n_left))
    return np.concatenate([left[::-1], [0.0], right])


def horizon_sample(theta1: float, theta2: float, grid: Sequence[float], seed: int, n_samples: int = 1) -> HorizonSample:
    """Sample the reflection coupling with drifts ``2*theta`` and variance 2 per unit.

    ``grid`` must be uniform and symmetric about 0. The paths are extended left by a
    burn-in margin long enough for the left supremum (at least a quarter of the span). Replica r draws from its own stream
    keyed by (seed, r), so it does not depend on ``n_samples``.
    """
    if not theta1 < theta2:
        raise ValueError("theta1 must be smaller than theta2")
    grid = np.asarray(grid, dtype=np.float64)
    h = float(grid[1] - grid[0])
    n_half = (len(grid) - 1) // 2
    if len(grid) % 2 == 0 or not np.allclose(grid, h * np.arange(-n_half, n_half + 1), atol=1e-12 * max(1.0, abs(grid).max())):
        raise ValueError("grid must be uniform, of odd length, and symmetric about 0")
    n_burn = int(math.ceil(_left_length(theta1, theta2, h * (len(grid) - 1)) / h))
    n_left = n_half + n_burn
    b1 = np.empty((n_samples, len(grid)))
    b2 = np.empty_like(b1)
    b3 = np.empty_like(b1)
    delta = np.empty_like(b1)
    flagged = np.zeros(n_samples, dtype=bool)
    for r in range(n_samples):
        rng = np.random.default_rng([int(seed), r])
        p1 = _two_sided(rng, n_left, n_half, h, 2 * theta1, 2.0)
        p3 = _two_sided(rng, n_left, n_half, h, 2 * theta2, 2.0)
        run = np.maximum.accumulate(p3 - p1)
        at_zero = run[n_left]
        flagged[r] = int(np.argmax((p3 - p1)[: n_left + 1])) < n_burn
        sl = slice(n_burn, None)
        b1[r], b3[r] = p1[sl], p3[sl]
        delta[r] = run[sl] - at_zero
        b2[r] = p1[sl] + delta[r]
    return HorizonSample(grid, b1, b2, b3, flagged, delta, (theta1, theta2), int(seed))


@dataclass
class DecayRow:
    y: float
    estimate: float
    lower: float
    upper: float
    closed_form: float


def coalescence_prob_closed_form(theta1: float, theta2: float, y: float) -> float:
    """P(sup over [0, 2y] of B4 <= sup over (-inf, 0] of B4), B4 = B3 - B1 (drift
    2(theta2 - theta1), variance 4 per unit).

    Looking left from 0, B4 is a Brownian motion with drift -2(theta2 - theta1) and
    variance 4, so its supremum is exponential with rate theta2 - theta1. The right-hand
    supremum uses the standard running-maximum law of drifted Brownian motion.
    """
    mu = 2.0 * (theta2 - theta1)
    sigma = 2.0
    rate = theta2 - theta1
    t = 2.0 * y
    if t <= 0:
        return 1.0
    st = sigma * math.sqrt(t)

    def cdf_max(m: float) -> float:
        tail = math.exp(2 * mu * m / sigma**2 + stats.norm.logcdf((-m - mu * t) / st))
        return stats.norm.cdf((m - mu * t) / st) - tail

    val, _ = integrate.quad(lambda m: cdf_max(m) * rate * math.exp(-rate * m), 0.0, math.inf, limit=200)
    return float(val)


def delta_increment_sample(theta1: float, theta2: float, length: float, n: int, seed: int) -> np.ndarray:
    """Exact draws of ``(B2 - B1)(length) - (B2 - B1)(0)``.

    This is ``max(0, M - S)`` with M the supremum of B4 = B3 - B1 over ``[0, length]``
    (sampled from the endpoint and the bridge-maximum law) and S its supremum over the
    left half-line (exponential with rate theta2 - theta1).
    """
    if not theta1 < theta2:
        raise ValueError("theta1 must be smaller than theta2")
    if length <= 0:
        return np.zeros(n)
    rng = np.random.default_rng(int(seed))
    mu, var = 2.0 * (theta2 - theta1), 4.0
    end = mu * length + math.sqrt(var * length) * rng.standard_normal(n)
    top = 0.5 * (end + np.sqrt(end**2 + 2.0 * var * length * rng.exponential(size=n)))
    left = rng.exponential(1.0 / (theta2 - theta1), size=n)
    return np.maximum(0.0, top - left)


def coalescence_prob_estimate(
    theta1: float, theta2: float, y_list: Sequence[float], reps: int, seed: int, h: float = 2.0**-6
) -> list[DecayRow]:
    """Monte Carlo of the coalescence event for each y, with 95% Clopper-Pearson bounds.

    All y share the same replicas, so estimates are nested. The left half-line is
    truncated at a length where the omitted supremum is negligible for the drift.
    """
    y_list = [float(y) for y in y_list]
    if any(b <= a for a, b in zip(y_list, y_list[1:])) or y_list[0] <= 0:
        raise ValueError("y_list must be positive and increasing")
    mu = 2.0 * (theta2 - theta1)
    n_right = int(math.ceil(2 * y_list[-1] / h))
    left_len = 2 * y_list[-1] + _left_length(theta1, theta2, 2 * y_list[-1])
    n_left = int(math.ceil(left_len / h))
    idx = [int(round(2 * y / h)) for y in y_list]
    hits = np.zeros(len(y_list), dtype=np.int64)
    rng = np.random.default_rng(int(seed))
    chunk = 2000
    done = 0
    sd = 2.0 * math.sqrt(h)
    while done < reps:
        k = min(chunk, reps - done)
        left = np.cumsum(-mu * h + sd * rng.standard_normal((k, n_left)), axis=1)
        left_sup = np.maximum(left.max(axis=1), 0.0)
        right = np.cumsum(mu * h + sd * rng.standard_normal((k, n_right)), axis=1)
        right_run = np.maximum.accumulate(right, axis=1)
        for a, n in enumerate(idx):
            hits[a] += int((right_run[:, n - 1] <= left_sup).sum())
        done += k
    rows = []
    for y, hcount in zip(y_list, hits):
        ci = stats.binomtest(int(hcount), reps).proportion_ci(confidence_level=0.95)
        rows.append(DecayRow(y, hcount / reps, float(ci.low), float(ci.high), coalescence_prob_closed_form(theta1, theta2, y)))
    return rows


@dataclass(frozen=True)
class ContinuumMatch:
    """Lattice-to-continuum dictionary for exponential weights.

    ``unit`` is the continuum length of one lattice step along a level; ``theta`` are
    the matched drift parameters of the two directions.
    """

    theta1: float
    theta2: float
    unit: float


def busemann_step_moments(d: float) -> tuple[float, float]:
    """Mean and variance of one Busemann increment along a level for exponential weights.

    A step along a level splits into a horizontal and a vertical stationary increment,
    exponential with rates ``1 - rho`` and ``rho`` where ``rho = sqrt(d) / (1 + sqrt(d))``.
    """
    rho = math.sqrt(d) / (1 + math.sqrt(d))
    return 1 / (1 - rho) - 1 / rho, 1 / (1 - rho) ** 2 + 1 / rho**2


def continuum_match(d1: float, d2: float) -> ContinuumMatch:
    """Match lattice Busemann increments to variance-2 Brownian motions with drift 2*theta."""
    m1, v1 = busemann_step_moments(d1)
    m2, v2 = busemann_step_moments(d2)
    unit = (v1 + v2) / 4.0
    return ContinuumMatch(m1 / (2 * unit), m2 / (2 * unit), unit)
