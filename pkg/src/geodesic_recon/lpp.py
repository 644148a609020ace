"""Weight fields and the exact last-passage metric on them.

Passage times exclude the weight of the start point and include the end point, so
``G(p; r) = G(p; m) + G(m; r)`` whenever ``m`` lies on a geodesic from ``p`` to ``r``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import _kernels as K
from ._validation import (
    MINUS_INFINITY,
    Box,
    BoxError,
    TieError,
    as_point,
    check_in,
    check_path,
)

FORMAT_VERSION = 1
MAX_SIDE = 2**15
BRUTE_FORCE_MAX = 12

DISTRIBUTIONS = {"exponential": 0, "geometric": 1}


@dataclass(frozen=True)
class WeightField:
    """Positive weights on a box. Seeded fields can be regenerated or extended."""

    box: Box
    weights: np.ndarray = dc_field(repr=False)
    seed: int | None = None
    distribution: str = "exponential"

    def __post_init__(self) -> None:
        if self.weights.shape != self.box.shape:
            raise ValueError(f"weights shape {self.weights.shape} does not match {self.box}")
        if not (self.weights > 0).all():
            raise ValueError("weights must be positive")
        self.weights.setflags(write=False)

    @classmethod
    def constant(cls, box: Box, value: float = 1.0) -> "WeightField":
        """Degenerate diagnostic field; every geodesic question on it ties."""
        return cls(box, np.full(box.shape, float(value)), None, "constant")

    @classmethod
    def from_array(cls, weights, origin: tuple[int, int] = (0, 0)) -> "WeightField":
        w = np.array(weights, dtype=np.float64)
        return cls(Box.from_corner(origin, w.shape), w, None, "custom")

    def weight(self, p) -> float:
        p = as_point(p)
        check_in(self.box, p)
        return float(self.weights[self.box.local(p)])

    def sub(self, box: Box) -> np.ndarray:
        return self.weights[self.box.slices(box)]

    def extended(self, box: Box) -> "WeightField":
        """The same seeded field on the bounding box of ``self.box`` and ``box``."""
        if self.box.contains_box(box):
            return self
        if self.seed is None:
            raise BoxError(f"{box} exceeds {self.box} and the field has no seed to extend it")
        return sample_field(self.box.union(box), self.seed, self.distribution)

    def min_gap(self) -> float:
        """Smallest gap between two sorted weights (distinctness diagnostic)."""
        flat = np.sort(self.weights, axis=None)
        return float(np.diff(flat).min()) if flat.size > 1 else np.inf

    def header(self) -> dict:
        return {
            "seed": self.seed,
            "box": self.box.to_dict(),
            "distribution": self.distribution,
            "format_version": FORMAT_VERSION,
        }


def sample_field(box: Box, seed: int, distribution: str = "exponential") -> WeightField:
    """I.i.d. weights keyed by ``(seed, i, j)``, so overlapping boxes agree pointwise."""
    if distribution not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {distribution!r}; choose from {sorted(DISTRIBUTIONS)}")
    n, m = box.shape
    if n > MAX_SIDE or m > MAX_SIDE:
        raise BoxError(f"box {box} exceeds the {MAX_SIDE} per-side guard")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must fit in 64 unsigned bits")
    w = K.sample_weights(seed, box.i_min, box.j_min, n, m, DISTRIBUTIONS[distribution])
    return WeightField(box, w, seed, distribution)


def save_field(field: WeightField, path, include_weights: bool = True) -> Path:
    """Write ``.npz`` with weights, or a JSON header only when regeneration suffices."""
    path = Path(path)
    header = field.header()
    if not include_weights:
        if field.seed is None:
            raise ValueError("an unseeded field cannot be stored as a header only")
        path.write_text(json.dumps(header, sort_keys=True, indent=1))
        return path
    with open(path, "wb") as fh:
        np.savez(fh, weights=field.weights, header=np.array(json.dumps(header, sort_keys=True)))
    return path


def load_field(path) -> WeightField:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:1] == b"{":
        header = json.loads(raw)
        weights = None
    else:
        with np.load(path) as npz:
            header = json.loads(str(npz["header"]))
            weights = np.array(npz["weights"])
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported field format {header.get('format_version')}")
    box = Box.from_dict(header["box"])
    if weights is None:
        return sample_field(box, header["seed"], header["distribution"])
    return WeightField(box, weights, header["seed"], header["distribution"])


def _span(field: WeightField, p, q) -> tuple[tuple[int, int], tuple[int, int], Box | None]:
    p, q = as_point(p), as_point(q)
    check_in(field.box, p, q)
    if q[0] < p[0] or q[1] < p[1]:
        return p, q, None
    return p, q, Box(p[0], q[0], p[1], q[1])


def passage_time(field: WeightField, p, q) -> float:
    """G(p; q), or ``MINUS_INFINITY`` when q is not up-right of p."""
    p, q, span = _span(field, p, q)
    if span is None:
        return MINUS_INFINITY
    if p == q:
        return 0.0
    return float(K.forward_dp(field.sub(span))[-1, -1])


def passage_times_from(field: WeightField, p, upto=None) -> np.ndarray:
    """G(p; v) for every v in the box spanned by p and ``upto`` (default: field corner)."""
    upto = field.box.corner if upto is None else upto
    p, q, span = _span(field, p, upto)
    if span is None:
        raise BoxError(f"{upto} is not up-right of {p}")
    return K.forward_dp(field.sub(span))


def geodesic(field: WeightField, p, q) -> np.ndarray:
    """The unique maximising path from p to q as an (k, 2) array of points."""
    p, q, span = _span(field, p, q)
    if span is None:
        raise BoxError(f"{q} is not reachable from {p}")
    if p == q:
        return np.array([p], dtype=np.int64)
    _, step, tie = K.backward_dp(field.sub(span))
    local = K.follow(step, 0, 0, span.shape[0] + span.shape[1])
    if tie[local[:, 0], local[:, 1]].any():
        raise TieError(f"two geodesics from {p} to {q} have equal length")
    return local + np.array(p, dtype=np.int64)


def path_length(field: WeightField, path) -> float:
    arr = check_path(path)
    for p in (arr[0], arr[-1]):
        check_in(field.box, tuple(p))
    local = arr[1:] - np.array(field.box.origin)
    return float(field.weights[local[:, 0], local[:, 1]].sum())


@lru_cache(maxsize=64)
def _offsets(a: int, b: int) -> np.ndarray:
    """Positions (relative to the start, start excluded) of every up-right path of a+b steps."""
    k = a + b
    chosen = list(itertools.combinations(range(k), a))
    combos = np.array(chosen, dtype=np.int64).reshape(len(chosen), a)
    is_i = np.zeros((combos.shape[0], k), dtype=np.int64)
    rows = np.repeat(np.arange(combos.shape[0]), a)
    is_i[rows, combos.ravel()] = 1
    di = np.cumsum(is_i, axis=1)
    dj = np.cumsum(1 - is_i, axis=1)
    out = np.stack([di, dj], axis=-1)
    out.setflags(write=False)
    return out


def brute_force_passage(field: WeightField, p, q) -> float:
    """Enumerate every up-right path from p to q (each displacement at most 12)."""
    p, q, span = _span(field, p, q)
    if span is None:
        return MINUS_INFINITY
    a, b = q[0] - p[0], q[1] - p[1]
    if a > BRUTE_FORCE_MAX or b > BRUTE_FORCE_MAX:
        raise ValueError(f"displacement {(a, b)} too large for enumeration")
    if a == b == 0:
        return 0.0
    w = field.sub(span)
    if a + b <= 16:
        off = _offsets(a, b)
        return float(w[off[..., 0], off[..., 1]].sum(axis=1).max())
    best = MINUS_INFINITY
    combos = itertools.combinations(range(a + b), a)
    while True:
        chunk = list(itertools.islice(combos, 100_000))
        if not chunk:
            return float(best)
        is_i = np.zeros((len(chunk), a + b), dtype=np.int64)
        for r, c in enumerate(chunk):
            is_i[r, list(c)] = 1
        di, dj = np.cumsum(is_i, axis=1), np.cumsum(1 - is_i, axis=1)
        best = max(best, w[di, dj].sum(axis=1).max())
