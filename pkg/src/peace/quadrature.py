"""Tensor-product quadrature over boxes, tail truncation and Z expectations.

All integrands are vectorised: they take an ``(N, n)`` array of points and
return ``N`` values.  Node values are assembled into a single array before
the weighted sum so the result does not depend on how evaluation was split
across workers (numpy's ``sum`` is pairwise over contiguous memory).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .domain import DomainBox

__all__ = [
    "QuadratureSpec",
    "TruncationPolicy",
    "QuadResult",
    "IntegrationError",
    "BudgetExceededError",
    "TruncationError",
    "nodes_1d",
    "tensor_nodes",
    "integrate_box",
    "integrate_boxes",
    "find_mode",
    "truncate_domain",
    "tail_mass",
    "expect_over_z",
]

Integrand = Callable[[np.ndarray], np.ndarray]


class IntegrationError(ArithmeticError):
    """Numeric failure inside a quadrature (NaN at a node, bad box)."""


class BudgetExceededError(IntegrationError):
    pass


class TruncationError(IntegrationError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    points: int = 16
    panels: int = 8
    rule: str = "gauss-legendre"
    budget: int = 10**7

    def __post_init__(self):
        if self.points < 2:
            raise ValueError("points per panel must be >= 2")
        if self.panels < 1:
            raise ValueError("panels per axis must be >= 1")
        if self.rule not in ("gauss-legendre", "midpoint"):
            raise ValueError(f"unknown rule {self.rule!r}")

    def node_count(self, ndim: int) -> int:
        return (self.points * self.panels) ** ndim

    def coarse(self) -> "QuadratureSpec":
        """The half-resolution rule used for the error estimate."""
        if self.panels >= 2:
            return QuadratureSpec(self.points, self.panels // 2, self.rule, self.budget)
        return QuadratureSpec(max(2, self.points // 2), 1, self.rule, self.budget)


@dataclass(frozen=True)
class TruncationPolicy:
    eps: float = 1e-10
    max_doublings: int = 64

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError("truncation eps must lie in (0, 1)")


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float


@lru_cache(maxsize=64)
def _reference_rule(points: int, rule: str) -> tuple[np.ndarray, np.ndarray]:
    if rule == "gauss-legendre":
        t, w = np.polynomial.legendre.leggauss(points)
        return (t + 1.0) / 2.0, w / 2.0
    t = (np.arange(points) + 0.5) / points
    return t, np.full(points, 1.0 / points)


def nodes_1d(a: float, b: float, points: int, panels: int, rule: str = "gauss-legendre"):
    """Composite rule on [a, b]: returns (nodes, weights), both sorted by node."""
    t, w = _reference_rule(points, rule)
    edges = np.linspace(a, b, panels + 1)
    h = np.diff(edges)
    x = (edges[:-1, None] + h[:, None] * t[None, :]).ravel()
    wt = (h[:, None] * w[None, :]).ravel()
    return x, wt


def tensor_nodes(axes: Sequence[tuple[np.ndarray, np.ndarray]]):
    """Flattened tensor grid ``(N, n)`` and product weights ``(N,)``."""
    xs = [ax[0] for ax in axes]
    ws = [ax[1] for ax in axes]
    grids = np.meshgrid(*xs, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wgrid = ws[0]
    for w in ws[1:]:
        wgrid = np.multiply.outer(wgrid, w)
    return pts, np.ascontiguousarray(np.asarray(wgrid).ravel())


def _evaluate(f: Integrand, pts: np.ndarray, workers: int | None) -> np.ndarray:
    if not workers or workers <= 1 or len(pts) < 4096:
        vals = np.asarray(f(pts), dtype=float)
    else:
        chunks = np.array_split(pts, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: np.asarray(f(c), dtype=float), chunks))
        vals = np.concatenate(parts)
    vals = np.broadcast_to(vals, (len(pts),))
    bad = ~np.isfinite(vals)
    if bad.any():
        where = pts[np.argmax(bad)]
        raise IntegrationError(f"non-finite integrand value at node {where.tolist()}")
    return vals


def _rule_on_box(f: Integrand, box: DomainBox, spec: QuadratureSpec, workers) -> float:
    n = box.ndim
    if spec.node_count(n) > spec.budget:
        raise BudgetExceededError(
            f"{spec.node_count(n)} nodes exceed the budget of {spec.budget}"
        )
    axes = [nodes_1d(lo, hi, spec.points, spec.panels, spec.rule) for lo, hi in box.bounds]
    pts, w = tensor_nodes(axes)
    vals = _evaluate(f, pts, workers)
    return float(np.sum(vals * w))


def integrate_box(
    f: Integrand,
    box: DomainBox,
    spec: QuadratureSpec | None = None,
    workers: int | None = None,
) -> QuadResult:
    """Integrate ``f`` over a bounded box.

    The error estimate is the difference against the same rule with half as
    many panels (or half the points when there is only one panel).
    """
    spec = spec or QuadratureSpec()
    if not box.bounded:
        raise IntegrationError("integrate_box needs a bounded box; truncate first")
    fine = _rule_on_box(f, box, spec, workers)
    coarse = _rule_on_box(f, box, spec.coarse(), workers)
    return QuadResult(fine, abs(fine - coarse))


def integrate_boxes(f: Integrand, boxes: Sequence[DomainBox], spec=None, workers=None) -> QuadResult:
    parts = [integrate_box(f, b, spec, workers) for b in boxes]
    return QuadResult(math.fsum(p.value for p in parts), math.fsum(p.error for p in parts))


# -------------------------------------------------------------------- truncation

_PROBE_BUDGET = 64**3


def _probe_count(ndim: int) -> int:
    return max(3, min(64, int(round(_PROBE_BUDGET ** (1.0 / ndim)))))


def _initial_probe_region(box: DomainBox) -> np.ndarray:
    region = np.array(box.bounds, dtype=float)
    for i, (lo, hi) in enumerate(box.bounds):
        if math.isinf(lo) and math.isinf(hi):
            region[i] = (-1.0, 1.0)
        elif math.isinf(hi):
            region[i] = (lo, lo + 2.0)
        elif math.isinf(lo):
            region[i] = (hi - 2.0, hi)
    return region


def _grid(region: np.ndarray, m: int):
    axes = [np.linspace(lo, hi, m) for lo, hi in region]
    return axes, np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)


def find_mode(weight: Integrand, box: DomainBox, max_doublings: int = 64) -> np.ndarray:
    """Numeric mode of a non-negative function by coarse grid search and zoom."""
    n = box.ndim
    m = _probe_count(n)
    region = _initial_probe_region(box)
    for _ in range(max_doublings + 1):
        axes, pts = _grid(region, m)
        vals = np.nan_to_num(np.asarray(weight(pts), dtype=float), nan=0.0)
        idx = np.unravel_index(int(np.argmax(vals)), (m,) * n)
        on_open_edge = False
        for i, (lo, hi) in enumerate(box.bounds):
            if (idx[i] == 0 and math.isinf(lo)) or (idx[i] == m - 1 and math.isinf(hi)):
                on_open_edge = True
        if vals.max() > 0 and not on_open_edge:
            break
        for i, (lo, hi) in enumerate(box.bounds):
            width = region[i, 1] - region[i, 0]
            if math.isinf(lo):
                region[i, 0] -= width
            if math.isinf(hi):
                region[i, 1] += width
    else:
        raise TruncationError("could not locate the mode of the density")
    if vals.max() <= 0:
        raise TruncationError("density vanishes on every probe point")
    best = np.array([axes[i][idx[i]] for i in range(n)])
    # zoom in around the best probe
    for _ in range(24):
        step = (region[:, 1] - region[:, 0]) / (m - 1)
        lo = np.maximum(best - 2 * step, np.array([b[0] for b in box.bounds]))
        hi = np.minimum(best + 2 * step, np.array([b[1] for b in box.bounds]))
        region = np.stack([lo, hi], axis=1)
        axes, pts = _grid(region, m)
        vals = np.nan_to_num(np.asarray(weight(pts), dtype=float), nan=0.0)
        idx = np.unravel_index(int(np.argmax(vals)), (m,) * n)
        best = np.array([axes[i][idx[i]] for i in range(n)])
        if np.all(hi - lo < 1e-9 * (1.0 + np.abs(best))):
            break
    return best


def _box_mass(weight, bounds, spec) -> float:
    return integrate_box(weight, DomainBox.from_bounds(bounds), spec).value


def _cover(weight, box: DomainBox, mode, policy, spec) -> np.ndarray:
    """Grow a bounded box around ``mode`` until doubling any open side adds no mass."""
    bounds = np.array(box.bounds, dtype=float)
    half = np.ones(box.ndim) * 0.5
    for i, (lo, hi) in enumerate(box.bounds):
        if math.isinf(lo):
            bounds[i, 0] = mode[i] - half[i] if math.isinf(hi) else min(mode[i], hi) - 1.0
        if math.isinf(hi):
            bounds[i, 1] = mode[i] + half[i] if math.isinf(lo) else max(mode[i], lo) + 1.0
    open_sides = [(i, s) for i, (lo, hi) in enumerate(box.bounds) for s, e in ((0, lo), (1, hi)) if math.isinf(e)]
    tiny = policy.eps * 1e-3
    doublings = dict.fromkeys(open_sides, 0)
    for _ in range(policy.max_doublings * max(1, len(open_sides))):
        total = _box_mass(weight, bounds, spec)
        grew = False
        for i, s in open_sides:
            dist = abs(bounds[i, s] - mode[i]) or 1.0
            slab = bounds.copy()
            new_edge = mode[i] + (dist * 2 if s == 1 else -dist * 2)
            slab[i] = (bounds[i, 1], new_edge) if s == 1 else (new_edge, bounds[i, 0])
            added = _box_mass(weight, slab, spec)
            if added > tiny * max(total, 1e-300):
                bounds[i, s] = new_edge
                doublings[(i, s)] += 1
                if doublings[(i, s)] > policy.max_doublings:
                    raise TruncationError("mass target unreachable within the expansion limit")
                grew = True
        if not grew:
            if total <= 0:
                raise TruncationError("density has no mass near its mode")
            return bounds
    raise TruncationError("mass target unreachable within the expansion limit")


def _marginal_cdf(weight, bounds: np.ndarray, axis: int, cells: int, spec: QuadratureSpec):
    """Cell edges and cumulative mass of ``weight`` along one axis of ``bounds``."""
    n = len(bounds)
    edges = np.linspace(bounds[axis, 0], bounds[axis, 1], cells + 1)
    x_ax, w_ax = nodes_1d(bounds[axis, 0], bounds[axis, 1], 4, cells)
    others = [j for j in range(n) if j != axis]
    if others:
        per_axis = max(8, int((4e6 / (4 * cells)) ** (1.0 / len(others))))
        panels = max(1, min(spec.panels, per_axis // spec.points))
        points = min(spec.points, per_axis)
        other_axes = [nodes_1d(bounds[j, 0], bounds[j, 1], points, panels) for j in others]
    else:
        other_axes = []
    axes = [None] * n
    axes[axis] = (x_ax, w_ax)
    for j, ax in zip(others, other_axes):
        axes[j] = ax
    pts, w = tensor_nodes(axes)
    vals = np.nan_to_num(np.asarray(weight(pts), dtype=float), nan=0.0) * w
    shape = [len(a[0]) for a in axes]
    vals = vals.reshape(shape)
    line = vals.sum(axis=tuple(others)) if others else vals
    per_cell = line.reshape(cells, 4).sum(axis=1)
    return edges, np.concatenate([[0.0], np.cumsum(per_cell)])


def truncate_domain(
    weight: Integrand,
    box: DomainBox,
    policy: TruncationPolicy | None = None,
    spec: QuadratureSpec | None = None,
    cells: int = 2048,
) -> DomainBox:
    """Bounded box holding all but ``policy.eps`` of the mass of ``weight``.

    ``weight`` is usually a density (or a power of one) at a fixed z.  The
    tail budget of an axis is split evenly between its open sides; bounded
    sides are returned unchanged.
    """
    policy = policy or TruncationPolicy()
    spec = spec or QuadratureSpec()
    if box.bounded:
        return box
    mode = find_mode(weight, box, policy.max_doublings)
    bounds = _cover(weight, box, mode, policy, spec)
    result = bounds.copy()
    for _ in range(6):
        previous = result.copy()
        for i, (lo, hi) in enumerate(box.bounds):
            n_open = int(math.isinf(lo)) + int(math.isinf(hi))
            if n_open == 0:
                continue
            edges, cdf = _marginal_cdf(weight, bounds, i, cells, spec)
            total = cdf[-1]
            if total <= 0:
                raise TruncationError("density has no mass on the covering box")
            budget = policy.eps / n_open * total
            if math.isinf(lo):
                k = int(np.searchsorted(cdf, budget, side="right")) - 1
                result[i, 0] = edges[max(k, 0)]
            if math.isinf(hi):
                k = int(np.searchsorted(cdf, total - budget, side="left"))
                result[i, 1] = edges[min(k, cells)]
        if np.allclose(result, previous, rtol=1e-3, atol=0) or _ == 5:
            break
        # the covering box may be much wider than the mass; re-resolve on a tighter one
        width = result[:, 1] - result[:, 0]
        tighter = result.copy()
        for i, (lo, hi) in enumerate(box.bounds):
            if math.isinf(lo):
                tighter[i, 0] = result[i, 0] - 0.5 * width[i]
            if math.isinf(hi):
                tighter[i, 1] = result[i, 1] + 0.5 * width[i]
        if np.allclose(tighter, bounds):
            break
        bounds = tighter
    return DomainBox.from_bounds(result)


def tail_mass(weight: Integrand, outer: DomainBox, inner: DomainBox, spec=None, cells: int = 4096) -> list[float]:
    """Relative mass of ``weight`` outside ``inner`` along each axis of ``outer``."""
    spec = spec or QuadratureSpec()
    bounds = np.array(outer.bounds, dtype=float)
    out = []
    for i in range(outer.ndim):
        edges, cdf = _marginal_cdf(weight, bounds, i, cells, spec)
        lo, hi = inner.bounds[i]
        inside = np.interp(hi, edges, cdf) - np.interp(lo, edges, cdf)
        out.append(float(max(cdf[-1] - inside, 0.0) / cdf[-1]))
    return out


# ------------------------------------------------------------------ expectations


@dataclass
class Expectation:
    value: float
    error: float
    nodes: int = 0
    inner: list = field(default_factory=list, repr=False)


def _split(result) -> tuple[float, float]:
    if isinstance(result, tuple):
        return float(result[0]), float(result[1])
    value = getattr(result, "value", result)
    return float(value), float(getattr(result, "err_estimate", 0.0))


def expect_over_z(
    inner: Callable[[np.ndarray], object],
    z_dist,
    spec: QuadratureSpec | None = None,
    r: float = 1.0,
    policy: TruncationPolicy | None = None,
) -> Expectation:
    """E_Z[inner(Z)], or the weighted integral of inner against f_Z^r.

    ``inner`` may return a float, a ``(value, error)`` pair, or any object
    with ``value``/``err_estimate`` attributes.  For a density the reported
    error is the quadrature-weighted inner error; for samples it is the
    standard error of the mean.
    """
    spec = spec or QuadratureSpec()
    if r < 0:
        raise ValueError("weight exponent r must be non-negative")
    kind = z_dist.kind
    if kind == "none":
        v, e = _split(inner(np.zeros(0)))
        return Expectation(v, e, 1)
    if kind == "table":
        probs = z_dist.probs
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ValueError(f"discrete Z table sums to {math.fsum(probs)!r}, not 1")
        vals, errs = zip(*(_split(inner(z)) for z in z_dist.points))
        wts = probs if r == 1.0 else np.where(probs > 0, probs**r, 0.0) if r > 0 else np.ones_like(probs)
        value = math.fsum(w * v for w, v in zip(wts, vals))
        error = math.fsum(w * e for w, e in zip(wts, errs))
        return Expectation(value, error, len(vals), list(vals))
    if kind == "samples":
        if r != 1.0:
            raise ValueError("sample-based Z distributions only support r = 1")
        if len(z_dist.points) == 0:
            raise ValueError("empty Z sample list")
        vals = np.array([_split(inner(z))[0] for z in z_dist.points])
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        return Expectation(float(np.mean(vals)), se, len(vals), vals.tolist())
    # density
    fz = z_dist.density_fn()
    box = z_dist.domain
    if r == 0 and not box.bounded:
        raise ValueError("r = 0 needs a bounded Z domain")
    zweight = fz if r == 1.0 else (lambda pts: np.power(np.maximum(fz(pts), 0.0), r))
    if not box.bounded:
        box = truncate_domain(fz if r == 0 else zweight, box, policy, spec)
    axes = [nodes_1d(lo, hi, spec.points, spec.panels, spec.rule) for lo, hi in box.bounds]
    pts, w = tensor_nodes(axes)
    if len(pts) > spec.budget:
        raise BudgetExceededError(f"{len(pts)} Z nodes exceed the budget of {spec.budget}")
    dens = np.ones(len(pts)) if r == 0 else np.asarray(zweight(pts), dtype=float)
    keep = (dens * w) > 0
    vals = np.zeros(len(pts))
    errs = np.zeros(len(pts))
    for k in np.flatnonzero(keep):
        vals[k], errs[k] = _split(inner(pts[k]))
    value = float(np.sum(vals * dens * w))
    error = float(np.sum(errs * dens * w))
    return Expectation(value, error, int(keep.sum()), vals.tolist())
