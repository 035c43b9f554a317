"""Axis-aligned boxes, possibly with infinite endpoints."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = ["DomainBox", "parse_bound"]


def parse_bound(value) -> float:
    """Read a JSON endpoint: numbers, or the strings "inf" / "-inf"."""
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "+inf", "infinity", "+infinity"):
            return math.inf
        if text in ("-inf", "-infinity"):
            return -math.inf
        return float(text)
    return float(value)


@dataclass(frozen=True)
class DomainBox:
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        clean = []
        for lo, hi in self.bounds:
            lo, hi = float(lo), float(hi)
            if math.isnan(lo) or math.isnan(hi) or not lo < hi:
                raise ValueError(f"invalid interval [{lo}, {hi}]: need lo < hi")
            clean.append((lo, hi))
        if not clean:
            raise ValueError("a box needs at least one dimension")
        object.__setattr__(self, "bounds", tuple(clean))

    @classmethod
    def from_bounds(cls, bounds: Iterable[Sequence[float]]) -> "DomainBox":
        return cls(tuple((parse_bound(lo), parse_bound(hi)) for lo, hi in bounds))

    @classmethod
    def unit(cls, ndim: int) -> "DomainBox":
        return cls(((0.0, 1.0),) * ndim)

    @property
    def ndim(self) -> int:
        return len(self.bounds)

    @property
    def bounded(self) -> bool:
        return all(math.isfinite(lo) and math.isfinite(hi) for lo, hi in self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    @property
    def volume(self) -> float:
        return math.prod(hi - lo for lo, hi in self.bounds)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def intersect(self, other: "DomainBox") -> "DomainBox | None":
        out = []
        for (a, b), (c, e) in zip(self.bounds, other.bounds):
            lo, hi = max(a, c), min(b, e)
            if not lo < hi:
                return None
            out.append((lo, hi))
        return DomainBox(tuple(out))

    def overlaps(self, other: "DomainBox") -> bool:
        return self.intersect(other) is not None

    def to_json(self) -> list:
        def enc(v):
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")

        return [[enc(lo), enc(hi)] for lo, hi in self.bounds]
