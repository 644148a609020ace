"""Recovering running-maximum increments from the record-time set alone.

The record set of a drifted Brownian path is covered by dyadic boxes of side h, each
charged ``phi(h) = sqrt(h log|log h|)``. Cover sums are proportional to the increments
of the running maximum up to one constant, which is estimated from data and reported.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels as K

MAX_STEPS = 2**26
SCALE_GUARD = math.exp(-math.e)


@dataclass
class BrownianPath:
    T: float
    h: float
    values: np.ndarray = dc_field(repr=False)
    drift: float = 0.0
    variance: float = 1.0
    seed: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(len(self.values))

    def restrict(self, h: float) -> "BrownianPath":
        """The same path observed on a coarser dyadic grid."""
        r = h / self.h
        if abs(r - round(r)) > 1e-9 or round(r) < 1:
            raise ValueError("coarse step must be an integer multiple of the path step")
        return BrownianPath(self.T, h, self.values[:: int(round(r))], self.drift, self.variance, self.seed)


def _dyadic_depth(T: float, h: float) -> int:
    n = T / h
    k = int(round(math.log2(n))) if n >= 1 else -1
    if k < 0 or abs(2**k - n) > 1e-9 * n:
        raise ValueError("T / h must be a power of two")
    if 2**k > MAX_STEPS:
        raise ValueError(f"T / h = 2^{k} exceeds the 2^26 step guard")
    return k


def simulate_bm(T: float, h: float, drift: float = 0.0, variance: float = 1.0, seed: int = 0) -> BrownianPath:
    """Brownian path with drift on ``0, h, ..., T`` built by midpoint refinement.

    Refinement level l draws its normals from a stream keyed by (seed, l), so halving h
    only adds points: the coarse path is exactly the restriction of the fine one.
    """
    k = _dyadic_depth(T, h)
    vals = np.array([0.0, drift * T + math.sqrt(variance * T) * np.random.default_rng([int(seed), 0]).standard_normal()])
    span = T
    for lev in range(1, k + 1):
        z = np.random.default_rng([int(seed), lev]).standard_normal(len(vals) - 1)
        mids = 0.5 * (vals[:-1] + vals[1:]) + math.sqrt(variance * span / 4.0) * z
        out = np.empty(2 * len(vals) - 1)
        out[0::2] = vals
        out[1::2] = mids
        vals = out
        span /= 2.0
    return BrownianPath(float(T), float(h), vals, float(drift), float(variance), int(seed))


def running_max(path: BrownianPath) -> np.ndarray:
    return np.maximum.accumulate(path.values)


@dataclass
class SupportSet:
    """Grid times at which the path equals its running maximum."""

    h: float
    mask: np.ndarray = dc_field(repr=False)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def times(self) -> np.ndarray:
        return self.h * self.indices


def support_set(path: BrownianPath) -> SupportSet:
    return SupportSet(path.h, path.values == running_max(path))


def gauge_phi(h: float) -> float:
    if not 0 < h < SCALE_GUARD:
        raise ValueError(f"cover scale {h} must lie in (0, e^-e)")
    return math.sqrt(h * math.log(abs(math.log(h))))


def _index_range(support: SupportSet, interval: tuple[float, float]) -> tuple[int, int]:
    a, b = interval
    if b < a:
        raise ValueError("interval end precedes its start")
    lo = int(math.ceil(a / support.h - 1e-9))
    hi = int(math.ceil(b / support.h - 1e-9))
    return max(lo, 0), min(hi, len(support.mask))


def gauge_measure(support: SupportSet, interval: tuple[float, float], h_cover: float) -> float:
    """``phi(h_cover)`` times the number of dyadic boxes of side ``h_cover`` meeting the
    support inside ``[a, b)``. Additive over intervals whose ends are multiples of h_cover."""
    ratio = h_cover / support.h
    if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("h_cover must be an integer multiple of the grid step")
    phi = gauge_phi(h_cover)
    lo, hi = _index_range(support, interval)
    idx = np.flatnonzero(support.mask[lo:hi]) + lo
    if idx.size == 0:
        return 0.0
    boxes = np.unique(idx // int(round(ratio)))
    return float(boxes.size * phi)


@dataclass
class IncrementReport:
    intervals: list[tuple[float, float]]
    scale: float
    estimates: np.ndarray
    truth: np.ndarray
    ratio: float

    @property
    def reconstructed(self) -> np.ndarray:
        return self.ratio * self.estimates

    @property
    def relative_errors(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            err = np.abs(self.reconstructed - self.truth) / np.abs(self.truth)
        return np.where(self.truth == 0, np.where(self.estimates == 0, 0.0, np.inf), err)


def true_increments(path: BrownianPath, intervals: Sequence[tuple[float, float]]) -> np.ndarray:
    m = running_max(path)
    out = []
    for a, b in intervals:
        lo = min(int(round(a / path.h)), len(m) - 1)
        hi = min(int(round(b / path.h)), len(m) - 1)
        out.append(m[hi] - m[lo])
    return np.array(out)


def reconstruct_increments(
    support: SupportSet, intervals: Sequence[tuple[float, float]], scale: float, truth: np.ndarray
) -> IncrementReport:
    """Cover-sum estimates per interval, calibrated by one ratio fitted on all of them."""
    intervals = [tuple(map(float, iv)) for iv in intervals]
    if len(intervals) < 2:
        raise ValueError("need at least two intervals")
    srt = sorted(intervals)
    if any(b[0] < a[1] for a, b in zip(srt, srt[1:])):
        raise ValueError("intervals must be disjoint")
    est = np.array([gauge_measure(support, iv, scale) for iv in intervals])
    truth = np.asarray(truth, dtype=np.float64)
    ratio = float(truth.sum() / est.sum()) if est.sum() > 0 else math.nan
    return IncrementReport(intervals, scale, est, truth, ratio)


class GaugeReconstructor(BaseEstimator):
    """Learn the cover-sum calibration constant on some intervals, predict others."""

    def __init__(self, scale: float = 2.0**-16):
        self.scale = scale

    def fit(self, support: SupportSet, intervals, increments) -> "GaugeReconstructor":
        est = np.array([gauge_measure(support, iv, self.scale) for iv in intervals])
        if est.sum() <= 0:
            raise ValueError("support is empty on every training interval")
        self.ratio_ = float(np.sum(increments) / est.sum())
        return self

    def predict(self, support: SupportSet, intervals) -> np.ndarray:
        return self.ratio_ * np.array([gauge_measure(support, iv, self.scale) for iv in intervals])


@dataclass
class ScaleTrend:
    scales: np.ndarray
    estimates: np.ndarray

    @property
    def relative_changes(self) -> np.ndarray:
        e = self.estimates
        return np.abs(np.diff(e)) / e[:-1]

    def oscillation_decreasing(self) -> bool:
        """Successive relative changes shrink: the finer half oscillates less than the coarser."""
        ch = self.relative_changes
        half = len(ch) // 2
        return bool(ch[-half:].mean() < ch[:half].mean())


def scale_trend(support: SupportSet, interval: tuple[float, float], scales: Sequence[float]) -> ScaleTrend:
    scales = np.array(sorted(scales, reverse=True), dtype=np.float64)
    return ScaleTrend(scales, np.array([gauge_measure(support, interval, h) for h in scales]))


@dataclass
class GaugeStudy:
    """One path's increment reconstruction, its two-halves calibration, and scale trend."""

    path_seed: int
    report: IncrementReport
    half_ratios: tuple[float, float]
    trend: ScaleTrend

    @property
    def halves_gap(self) -> float:
        a, b = self.half_ratios
        return abs(a / b - 1.0)

    def rows(self) -> list[dict]:
        r = self.report
        return [
            {
                "seed": self.path_seed,
                "interval_lo": lo,
                "interval_hi": hi,
                "scale": r.scale,
                "estimate": float(est),
                "truth": float(tr),
                "ratio": r.ratio,
            }
            for (lo, hi), est, tr in zip(r.intervals, r.estimates, r.truth)
        ]


def gauge_study(
    T: float = 16.0,
    steps: int = 2**22,
    drift: float = 1.0,
    scale: float = 2.0**-16,
    n_intervals: int = 4,
    trend_scales: Sequence[float] = tuple(2.0**-k for k in range(8, 15)),
    seed: int = 0,
) -> GaugeStudy:
    """Split ``[0, T]`` into equal intervals, calibrate on all of them and on each half."""
    if n_intervals < 4 or n_intervals % 2:
        raise ValueError("need an even number of intervals, at least four")
    path = simulate_bm(T, T / steps, drift, 1.0, seed)
    support = support_set(path)
    edges = np.linspace(0.0, T, n_intervals + 1)
    intervals = list(zip(edges[:-1].tolist(), edges[1:].tolist()))
    truth = true_increments(path, intervals)
    half = n_intervals // 2
    report = reconstruct_increments(support, intervals, scale, truth)
    first = reconstruct_increments(support, intervals[:half], scale, truth[:half]).ratio
    second = reconstruct_increments(support, intervals[half:], scale, truth[half:]).ratio
    return GaugeStudy(int(seed), report, (first, second), scale_trend(support, (0.0, T), trend_scales))


def local_time_crosscheck(path: BrownianPath, epsilon_list: Sequence[float]) -> np.ndarray:
    """``eps * (downcrossings of |B| from eps to 0)`` over the whole path, per epsilon.

    For driftless paths this estimates the local time at 0, which has the law of the
    running maximum at the same time.
    """
    return np.array([eps * K.downcrossings(path.values, float(eps)) for eps in epsilon_list])


def write_study_csv(rows: list[dict], path) -> Path:
    """Rows of (seed, interval, scale, estimate, truth, ratio)."""
    path = Path(path)
    cols = ["seed", "interval_lo", "interval_hi", "scale", "estimate", "truth", "ratio"]
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=cols)
        out.writeheader()
        for r in rows:
            out.writerow({c: (repr(round(r[c], 12)) if isinstance(r[c], float) else r[c]) for c in cols})
    return path
