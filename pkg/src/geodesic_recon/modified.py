"""Switching walks over two geodesic trees and the modified distance they induce.

A switching walk leaves each vertex along either tree's ray step. Runs of steps that
follow one tree form the segments of an alternating path, so the supremum over
alternating paths is a longest-path problem on a DAG with out-degree at most two.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import _kernels as K
from ._validation import (
    MINUS_INFINITY,
    Box,
    BoxError,
    NotStabilizedError,
    StuckError,
    as_point,
    check_in,
    check_path,
    level,
)
from .busemann import GeodesicTree
from .lpp import WeightField

TAGS = ("d1", "d2")
_STEP_CHAR = {K.STEP_I: "I", K.STEP_J: "J"}


@dataclass
class SwitchingDag:
    """Both trees' step fields on a common region plus the per-step weights.

    ``gain_i[v]`` is the weight collected by the step +(1,0) out of v (the head's weight),
    ``gain_j[v]`` likewise for +(0,1).
    """

    directions: tuple[float, float]
    region: Box
    window: Box
    step1: np.ndarray = dc_field(repr=False)
    step2: np.ndarray = dc_field(repr=False)
    excluded: np.ndarray = dc_field(repr=False)
    gain_i: np.ndarray = dc_field(repr=False)
    gain_j: np.ndarray = dc_field(repr=False)

    def edges(self, p) -> list[tuple[tuple[int, int], tuple[str, ...]]]:
        """Distinct out-edges of p as (head, tags); a shared step carries both tags."""
        p = as_point(p)
        check_in(self.region, p, what="DAG region")
        a, b = self.region.local(p)
        if self.excluded[a, b]:
            return []
        out = []
        for s in sorted({int(self.step1[a, b]), int(self.step2[a, b])}):
            if s == K.NO_STEP:
                continue
            head = (p[0] + 1, p[1]) if s == K.STEP_I else (p[0], p[1] + 1)
            if not self.region.contains(head) or self.excluded[self.region.local(head)]:
                continue
            tags = tuple(t for t, st in zip(TAGS, (self.step1[a, b], self.step2[a, b])) if st == s)
            out.append((head, tags))
        return out

    def edge_count(self, box: Box | None = None) -> int:
        box = self.window if box is None else box
        return sum(len(self.edges(p)) for p in box.points())

    def _local_pair(self, p, q):
        p, q = as_point(p), as_point(q)
        check_in(self.region, p, q, what="DAG region")
        for v in (p, q):
            if self.excluded[self.region.local(v)]:
                raise NotStabilizedError(f"{v} is excluded from the switching DAG")
        return p, q


def build_switching_dag(
    tree1: GeodesicTree, tree2: GeodesicTree, field: WeightField, excluded: np.ndarray | None = None
) -> SwitchingDag:
    """DAG over the shared region of two trees fitted together.

    By default vertices unstabilized in either tree are holes; pass ``excluded`` to use a
    common hole set across several DAGs (needed when comparing nested direction windows).
    """
    if tree1.region != tree2.region or tree1.window != tree2.window:
        raise BoxError("trees must share window and region")
    if not tree1.direction < tree2.direction:
        raise ValueError("tree1 must have the smaller direction")
    region = tree1.region
    if excluded is None:
        excluded = ~(tree1.stabilized & tree2.stabilized)
    excluded = np.ascontiguousarray(excluded, dtype=bool)
    if excluded.shape != region.shape:
        raise ValueError("excluded mask must cover the region")
    padded = field.extended(Box(region.i_min, region.i_max + 1, region.j_min, region.j_max + 1))
    w = padded.sub(Box(region.i_min, region.i_max + 1, region.j_min, region.j_max + 1))
    return SwitchingDag(
        directions=(tree1.direction, tree2.direction),
        region=region,
        window=tree1.window,
        step1=tree1.step,
        step2=tree2.step,
        excluded=excluded,
        gain_i=np.ascontiguousarray(w[1:, :-1]),
        gain_j=np.ascontiguousarray(w[:-1, 1:]),
    )


def _forward(dag: SwitchingDag, p, upto):
    a, b = dag.region.local(p)
    ia, ib = dag.region.local(upto)
    return K.dag_forward(dag.step1, dag.step2, dag.excluded, dag.gain_i, dag.gain_j, a, b, ia, ib)


def modified_distance(dag: SwitchingDag, p, q) -> float:
    """Best switching-walk length from p to q, ``MINUS_INFINITY`` when no walk exists."""
    p, q = dag._local_pair(p, q)
    if q[0] < p[0] or q[1] < p[1]:
        return MINUS_INFINITY
    val, _ = _forward(dag, p, q)
    return float(val[-1, -1])


def modified_distances_from(dag: SwitchingDag, p, upto=None) -> np.ndarray:
    """Best walk length from p to every vertex of the box spanned by p and ``upto``."""
    upto = dag.region.corner if upto is None else as_point(upto)
    p, _ = dag._local_pair(p, p)
    return _forward(dag, p, upto)[0]


@dataclass
class AlternatingPath:
    """Segments that alternately follow tree 1 (``"d1"``) and tree 2 (``"d2"``).

    Each segment's points include its own first point, which is the previous segment's
    last point.
    """

    start: tuple[int, int]
    segments: list[tuple[str, np.ndarray]]
    tie: bool = False

    def __post_init__(self) -> None:
        for (t0, _), (t1, _) in zip(self.segments, self.segments[1:]):
            if t0 == t1:
                raise ValueError("consecutive segments must switch trees")

    @property
    def points(self) -> np.ndarray:
        if not self.segments:
            return np.array([self.start], dtype=np.int64)
        parts = [self.segments[0][1]] + [seg[1:] for _, seg in self.segments[1:]]
        return np.concatenate(parts)

    def __len__(self) -> int:
        return len(self.segments)

    def to_json(self) -> list[dict]:
        out = []
        for tag, seg in self.segments:
            steps = "".join("I" if d[0] else "J" for d in np.diff(seg, axis=0))
            out.append({"tag": tag, "start": [int(seg[0, 0]), int(seg[0, 1])], "steps": steps})
        return out

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json()))
        return path


def _segments(points: np.ndarray, allowed: np.ndarray) -> list[tuple[str, np.ndarray]]:
    """Split a path into the fewest tagged runs; ``allowed[k, t]`` says step k follows tree t."""
    segs = []
    k, n = 0, len(allowed)
    prev = -1
    while k < n:
        runs = []
        for t in (0, 1):
            r = 0
            while k + r < n and allowed[k + r, t]:
                r += 1
            runs.append(r if t != prev else -1)
        t = int(np.argmax(runs))
        if runs[t] <= 0:
            raise StuckError(f"no tree follows the path at {tuple(points[k])}")
        segs.append((TAGS[t], points[k : k + runs[t] + 1]))
        k += runs[t]
        prev = t
    return segs


def _step_codes(points: np.ndarray) -> np.ndarray:
    return np.where(np.diff(points, axis=0)[:, 0] == 1, K.STEP_I, K.STEP_J)


def argmax_walk(dag: SwitchingDag, p, q) -> AlternatingPath:
    """A maximising switching walk from p to q; ``tie`` is set when another walk matches it."""
    p, q = dag._local_pair(p, q)
    if q[0] < p[0] or q[1] < p[1]:
        raise ValueError(f"{q} is not up-right of {p}")
    val, tie = _forward(dag, p, q)
    if not np.isfinite(val[-1, -1]):
        raise ValueError(f"no switching walk from {p} to {q}")
    a0, b0 = dag.region.local(p)
    i, j = q[0] - p[0], q[1] - p[1]
    rev = [(i, j)]
    tied = bool(tie[i, j])
    while (i, j) != (0, 0):
        best, pick = MINUS_INFINITY, None
        if i > 0 and np.isfinite(val[i - 1, j]):
            u = (a0 + i - 1, b0 + j)
            if K.STEP_I in (dag.step1[u], dag.step2[u]):
                best, pick = val[i - 1, j] + dag.gain_i[u], (i - 1, j)
        if j > 0 and np.isfinite(val[i, j - 1]):
            u = (a0 + i, b0 + j - 1)
            if K.STEP_J in (dag.step1[u], dag.step2[u]):
                cand = val[i, j - 1] + dag.gain_j[u]
                if cand > best:
                    best, pick = cand, (i, j - 1)
        i, j = pick
        tied = tied or bool(tie[i, j])
        rev.append((i, j))
    pts = np.array(rev[::-1], dtype=np.int64) + np.array(p, dtype=np.int64)
    if len(pts) == 1:
        return AlternatingPath(p, [], tied)
    loc = pts[:-1] - np.array(dag.region.origin)
    codes = _step_codes(pts)
    allowed = np.stack(
        [dag.step1[loc[:, 0], loc[:, 1]] == codes, dag.step2[loc[:, 0], loc[:, 1]] == codes], axis=1
    )
    return AlternatingPath(p, _segments(pts, allowed), tied)


def greedy_decompose(tree1: GeodesicTree, tree2: GeodesicTree, gamma) -> AlternatingPath:
    """Cover an up-right path by maximal overlaps with alternating trees.

    Starts with whichever tree's ray overlaps the path longer, then at each switch point
    continues along the other tree for as long as it agrees with the path.
    """
    pts = check_path(gamma)
    start = tuple(int(v) for v in pts[0])
    check_in(tree1.region, start, tuple(pts[-1]), what="tree region")
    if not (tree1.is_stabilized(start) and tree2.is_stabilized(start)):
        raise NotStabilizedError(f"start {start} is not stabilized in both trees")
    if len(pts) == 1:
        return AlternatingPath(start, [])
    loc = pts[:-1] - np.array(tree1.region.origin)
    codes = _step_codes(pts)
    match = np.stack(
        [tree1.step[loc[:, 0], loc[:, 1]] == codes, tree2.step[loc[:, 0], loc[:, 1]] == codes], axis=1
    )
    segs = []
    k, n = 0, len(codes)
    t = None
    while k < n:
        if t is None:
            runs = [int(np.argmin(np.append(match[k:, s], False))) for s in (0, 1)]
            t = int(np.argmax(runs))
        else:
            t = 1 - t
        run = int(np.argmin(np.append(match[k:, t], False)))
        if run == 0:
            raise StuckError(f"neither tree continues the path at {tuple(pts[k])}")
        segs.append((TAGS[t], pts[k : k + run + 1]))
        k += run
    return AlternatingPath(start, segs)


def is_wedged(tree1: GeodesicTree, tree2: GeodesicTree, path) -> bool:
    """Whether every point's tree-1 ray stays weakly left of the path and its tree-2 ray
    weakly right, over the path's remaining levels (left means larger i on a level)."""
    pts = check_path(path)
    end = level(pts[-1])
    for k, r in enumerate(pts):
        for tree, sign in ((tree1, 1), (tree2, -1)):
            ray = tree.ray(tuple(r), until_level=end)
            ref = pts[k : k + len(ray), 0]
            if (sign * (ray[:, 0] - ref) < 0).any():
                return False
    return True
