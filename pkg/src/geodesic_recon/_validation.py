"""Errors, sentinels and argument checks shared by every module."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

MINUS_INFINITY = -math.inf
PLUS_INFINITY = math.inf

EQ_TOL = 1e-9


class ReconError(Exception):
    """Base class for the package's domain errors."""


class TieError(ReconError):
    """Two distinct optimal paths or walks have values within 1e-12."""


class NotStabilizedError(ReconError):
    """A finite-horizon computation did not certify against its doubled horizon."""


class StuckError(ReconError):
    """Greedy decomposition found no tree overlapping the path at a switch point."""


class NotFoundError(ReconError):
    """A search over a bounded range came back empty."""


class BoxError(ValueError):
    """A point or box is outside the region an operation can see."""


class MonotonicityError(AssertionError):
    """A profile that must be non-decreasing was not."""


@dataclass(frozen=True)
class Box:
    """Inclusive integer rectangle ``i_min..i_max`` x ``j_min..j_max``."""

    i_min: int
    i_max: int
    j_min: int
    j_max: int

    def __post_init__(self) -> None:
        if self.i_max < self.i_min or self.j_max < self.j_min:
            raise BoxError(f"empty box {self}")

    @classmethod
    def from_corner(cls, origin: tuple[int, int], shape: tuple[int, int]) -> "Box":
        return cls(origin[0], origin[0] + shape[0] - 1, origin[1], origin[1] + shape[1] - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.i_max - self.i_min + 1, self.j_max - self.j_min + 1)

    @property
    def origin(self) -> tuple[int, int]:
        return (self.i_min, self.j_min)

    @property
    def corner(self) -> tuple[int, int]:
        return (self.i_max, self.j_max)

    @property
    def size(self) -> int:
        n, m = self.shape
        return n * m

    @property
    def diameter(self) -> int:
        n, m = self.shape
        return max(n, m)

    def contains(self, p: tuple[int, int]) -> bool:
        return self.i_min <= p[0] <= self.i_max and self.j_min <= p[1] <= self.j_max

    def contains_box(self, other: "Box") -> bool:
        return self.contains(other.origin) and self.contains(other.corner)

    def local(self, p: tuple[int, int]) -> tuple[int, int]:
        return (p[0] - self.i_min, p[1] - self.j_min)

    def slices(self, inner: "Box") -> tuple[slice, slice]:
        """Array slices selecting ``inner`` inside an array laid out over ``self``."""
        if not self.contains_box(inner):
            raise BoxError(f"{inner} not inside {self}")
        a, b = self.local(inner.origin)
        n, m = inner.shape
        return slice(a, a + n), slice(b, b + m)

    def points(self) -> Iterator[tuple[int, int]]:
        for i in range(self.i_min, self.i_max + 1):
            for j in range(self.j_min, self.j_max + 1):
                yield (i, j)

    def union(self, other: "Box") -> "Box":
        return Box(
            min(self.i_min, other.i_min),
            max(self.i_max, other.i_max),
            min(self.j_min, other.j_min),
            max(self.j_max, other.j_max),
        )

    def to_dict(self) -> dict:
        return {"i_min": self.i_min, "i_max": self.i_max, "j_min": self.j_min, "j_max": self.j_max}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(int(d["i_min"]), int(d["i_max"]), int(d["j_min"]), int(d["j_max"]))


def level(p: tuple[int, int]) -> int:
    return int(p[0]) + int(p[1])


def transverse(p: tuple[int, int]) -> int:
    """Spatial coordinate along a level; grows toward larger j."""
    return int(p[1]) - int(p[0])


def point_at(lev: int, x: int) -> tuple[int, int]:
    """Inverse of ``(level, transverse)``; requires matching parity."""
    if (lev + x) % 2:
        raise ValueError(f"level {lev} and transverse {x} have different parity")
    return ((lev - x) // 2, (lev + x) // 2)


def as_point(p) -> tuple[int, int]:
    try:
        i, j = p
    except (TypeError, ValueError):
        raise TypeError(f"expected an (i, j) pair, got {p!r}") from None
    if int(i) != i or int(j) != j:
        raise TypeError(f"non-integer point {p!r}")
    return (int(i), int(j))


def check_in(box: Box, *pts, what: str = "box") -> None:
    for p in pts:
        if not box.contains(p):
            raise BoxError(f"point {p} outside {what} {box}")


def check_path(path) -> np.ndarray:
    """Coerce to an (k, 2) int array and verify every step is +(1,0) or +(0,1)."""
    arr = np.asarray(path, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ValueError("a lattice path is a non-empty sequence of (i, j) points")
    steps = np.diff(arr, axis=0)
    ok = ((steps[:, 0] == 1) & (steps[:, 1] == 0)) | ((steps[:, 0] == 0) & (steps[:, 1] == 1))
    if not ok.all():
        k = int(np.argmin(ok))
        raise ValueError(f"invalid step {tuple(arr[k])} -> {tuple(arr[k + 1])}")
    return arr


def check_direction(d: float) -> float:
    d = float(d)
    if not (d > 0 and math.isfinite(d)):
        raise ValueError(f"direction slope must be positive and finite, got {d}")
    return d


def finite_or_none(x: float):
    """JSON-safe float: infinities become null."""
    x = float(x)
    return x if math.isfinite(x) else None
