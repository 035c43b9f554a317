"""Flux-based total variation and PEACE on tensor grids.

A grid with supports x_{i,1} < ... < x_{i,n_i} is cut into cube-likes, one
per choice of adjacent pairs on every axis.  For a cube-like C and axis i:

* dif^{(i)} is the mean over the 2^{n-1} corresponding corner pairs of
  g(upper corner) - g(lower corner);
* Vol(F_i) is the product of the cube's edge lengths except the i-th;
* Flux^{(i)} = dif^{(i)} Vol(F_i) and Flux = |(Flux^{(1)}, ..., Flux^{(n)})|;
* omega = 4^d / n * sum_i mean over pairs of P^d(x) P^d(x') and
  PFlux = omega * Flux.

All per-cube quantities are computed as arrays of shape (n_1-1, ..., n_n-1)
over the axes with at least two support points; single-point axes are
fixed coordinates and contribute no cubes.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import DomainBox
from .model import DiscreteGrid, ModelError, StructuralModel, power_weight
from .quadrature import TruncationPolicy, expect_over_z

__all__ = [
    "CubeLike",
    "FaceLike",
    "DiscretePeaceTerms",
    "dif",
    "dif_arrays",
    "face_volumes",
    "flux_tv",
    "tv_classic",
    "tv_ani",
    "omega",
    "omega_array",
    "discrete_terms",
    "discrete_piev",
    "peace_discrete",
    "peace_phi",
    "signed_discrete_piev",
    "phi_oracle_discrete",
    "OracleOutcome",
    "grid_refine_peace",
    "inject_dif_sign_fault",
]

MAX_ORACLE_CUBES = 10_000

# Test hook: flips the sign of every mean difference while active.
_DIF_SIGN: contextvars.ContextVar[float] = contextvars.ContextVar("dif_sign", default=1.0)


@contextlib.contextmanager
def inject_dif_sign_fault():
    token = _DIF_SIGN.set(-1.0)
    try:
        yield
    finally:
        _DIF_SIGN.reset(token)


@dataclass(frozen=True)
class CubeLike:
    """Cube-like selected by upper indices j (0-based, 1 <= j_i <= n_i - 1)."""

    supports: tuple[np.ndarray, ...]
    index: tuple[int, ...]

    def __post_init__(self):
        if len(self.index) != len(self.supports):
            raise ValueError("one index per axis is required")
        for i, (s, j) in enumerate(zip(self.supports, self.index)):
            if not 1 <= j <= len(s) - 1:
                raise ValueError(f"cube index {j} out of range on axis {i}")

    @property
    def ndim(self) -> int:
        return len(self.index)

    def edges(self) -> np.ndarray:
        return np.array([s[j] - s[j - 1] for s, j in zip(self.supports, self.index)])

    def corners(self) -> np.ndarray:
        pairs = [(s[j - 1], s[j]) for s, j in zip(self.supports, self.index)]
        mesh = np.meshgrid(*pairs, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def face(self, axis: int, upper: bool = True) -> "FaceLike":
        return FaceLike(self, axis, upper)


@dataclass(frozen=True)
class FaceLike:
    cube: CubeLike
    axis: int
    upper: bool = True

    @property
    def fixed_value(self) -> float:
        s, j = self.cube.supports[self.axis], self.cube.index[self.axis]
        return float(s[j] if self.upper else s[j - 1])

    def corners(self) -> np.ndarray:
        c = self.cube.corners()
        return c[c[:, self.axis] == self.fixed_value]

    @property
    def volume(self) -> float:
        e = self.cube.edges()
        return float(np.prod(np.delete(e, self.axis)))


@dataclass
class DiscretePeaceTerms:
    dif: list[np.ndarray]
    volume: list[np.ndarray]
    omega: np.ndarray
    pflux_axis: list[np.ndarray]
    pflux: np.ndarray


# ---------------------------------------------------------------- array core


def _active(grid_shape: Sequence[int]) -> list[int]:
    return [i for i, n in enumerate(grid_shape) if n >= 2]


def _squeeze(table: np.ndarray, active: list[int]) -> np.ndarray:
    idx = tuple(slice(None) if i in active else 0 for i in range(table.ndim))
    return table[idx]


def _pair_mean(a: np.ndarray, skip: int) -> np.ndarray:
    for k in range(a.ndim):
        if k == skip:
            continue
        lo = [slice(None)] * a.ndim
        hi = [slice(None)] * a.ndim
        lo[k] = slice(None, -1)
        hi[k] = slice(1, None)
        a = 0.5 * (a[tuple(lo)] + a[tuple(hi)])
    return a


def _pair_product(a: np.ndarray, axis: int) -> np.ndarray:
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return a[tuple(hi)] * a[tuple(lo)]


def _prepare(supports, table):
    shape = tuple(len(s) for s in supports)
    active = _active(shape)
    if not active:
        raise ModelError("every axis of the grid has a single support point")
    return [np.asarray(supports[i], dtype=float) for i in active], _squeeze(np.asarray(table, dtype=float), active)


def dif_arrays(supports, g_table) -> list[np.ndarray]:
    """Mean differences for every cube, one array per non-degenerate axis."""
    sup, g = _prepare(supports, g_table)
    sign = _DIF_SIGN.get()
    return [sign * _pair_mean(np.diff(g, axis=i), i) for i in range(len(sup))]


def face_volumes(supports) -> list[np.ndarray]:
    sup = [np.asarray(s, dtype=float) for s in supports if len(s) >= 2]
    if not sup:
        raise ModelError("every axis of the grid has a single support point")
    deltas = [np.diff(s) for s in sup]
    n = len(sup)
    out = []
    for i in range(n):
        vol = np.ones(tuple(len(dl) for dl in deltas))
        for k in range(n):
            if k != i:
                shape = [1] * n
                shape[k] = -1
                vol = vol * deltas[k].reshape(shape)
        out.append(vol)
    return out


def omega_array(supports, pmf_table, d: float) -> np.ndarray:
    sup, p = _prepare(supports, pmf_table)
    pd = power_weight(p, d / 2.0)  # P^d, with 0^0 := 1
    n = len(sup)
    total = sum(_pair_mean(_pair_product(pd, i), i) for i in range(n))
    return (4.0**d / n) * total


def _flux_norm(difs, vols) -> np.ndarray:
    return np.sqrt(sum((df * v) ** 2 for df, v in zip(difs, vols)))


def _grid(grid_or_model) -> DiscreteGrid:
    if isinstance(grid_or_model, StructuralModel):
        if grid_or_model.discrete is None:
            raise ModelError("a discrete model is required")
        return grid_or_model.discrete
    return grid_or_model


def discrete_terms(grid: DiscreteGrid | StructuralModel, z=(), d: float = 1.0) -> DiscretePeaceTerms:
    grid = _grid(grid)
    pmf, g = grid.tables(z)
    difs = dif_arrays(grid.supports, g)
    vols = face_volumes(grid.supports)
    w = omega_array(grid.supports, pmf, d)
    axis = [w * df * v for df, v in zip(difs, vols)]
    return DiscretePeaceTerms(difs, vols, w, axis, np.sqrt(sum(a * a for a in axis)))


# ------------------------------------------------------------ per-cube views


def _cube_of(grid: DiscreteGrid, cube) -> CubeLike:
    if isinstance(cube, CubeLike):
        return cube
    return CubeLike(grid.supports, tuple(int(j) for j in cube))


def _cube_slice(grid: DiscreteGrid, cube: CubeLike):
    return tuple(slice(j - 1, j + 1) for j in cube.index)


def dif(grid: DiscreteGrid, cube, axis: int, z=()) -> float:
    """Mean of g(upper) - g(lower) over the corner pairs of one cube along ``axis``."""
    grid = _grid(grid)
    cube = _cube_of(grid, cube)
    _, g = grid.tables(z)
    block = g[_cube_slice(grid, cube)]
    diffs = np.diff(block, axis=axis)
    return float(_DIF_SIGN.get() * diffs.mean())


def omega(grid: DiscreteGrid, cube, d: float, z=()) -> float:
    grid = _grid(grid)
    cube = _cube_of(grid, cube)
    pmf, _ = grid.tables(z)
    block = power_weight(pmf[_cube_slice(grid, cube)], d / 2.0)
    n = cube.ndim
    total = math.fsum(float(_pair_product(block, i).mean()) for i in range(n))
    return 4.0**d / n * total


def flux_tv(grid: DiscreteGrid | StructuralModel, z=()) -> float:
    """Discrete total variation: sum over cubes of |(dif_i Vol(F_i))_i|."""
    grid = _grid(grid)
    _, g = grid.tables(z)
    return float(np.sum(_flux_norm(dif_arrays(grid.supports, g), face_volumes(grid.supports))))


def _forward_2d(grid, z):
    grid = _grid(grid)
    if grid.ndim != 2:
        raise ModelError("tv_classic and tv_ani are defined for two-dimensional grids")
    _, g = grid.tables(z)
    d1 = g[1:, :-1] - g[:-1, :-1]
    d2 = g[:-1, 1:] - g[:-1, :-1]
    return d1, d2


def tv_classic(grid: DiscreteGrid | StructuralModel, z=()) -> float:
    """Isotropic image TV from forward differences at points with both neighbours."""
    d1, d2 = _forward_2d(grid, z)
    return float(np.sum(np.sqrt(d1 * d1 + d2 * d2)))


def tv_ani(grid: DiscreteGrid | StructuralModel, z=()) -> float:
    d1, d2 = _forward_2d(grid, z)
    return float(np.sum(np.abs(d1) + np.abs(d2)))


# ------------------------------------------------------------------- PEACE


def _result(value, d, method, err=0.0, domain=None, details=None):
    from .continuous import PeaceResult

    return PeaceResult(float(value), float(d), method, float(err), domain or [], details or {})


def _grid_domain(grid: DiscreteGrid) -> list:
    return [[[float(s[0]), float(s[-1])] for s in grid.supports]]


def discrete_piev(model: StructuralModel | DiscreteGrid, z=(), d: float = 1.0):
    """Sum of PFlux over all cubes for one z (omega already carries 4^d)."""
    grid = _grid(model)
    terms = discrete_terms(grid, z, d)
    return _result(np.sum(terms.pflux), d, "discrete-flux", 0.0, _grid_domain(grid))


def _z_law(model: StructuralModel):
    if model.z_dist.kind != "none" or not model.is_conditional:
        return model.z_dist
    from .model import ZDistribution

    zp = model.discrete.z_points
    if len(zp) != 1:
        raise ModelError("conditional discrete model needs a z_dist table")
    return ZDistribution.table(model.z_vars, zp, [1.0])


def peace_discrete(model: StructuralModel, d: float = 1.0):
    """E_Z of the summed PFlux; in 1-D this is 4^d sum |dg| P^d P^d."""
    if model.discrete is None:
        raise ModelError("peace_discrete needs a discrete model")
    if not d >= 0:
        raise ValueError("degree must be non-negative")

    def inner(z):
        return discrete_piev(model, z, d)

    e = expect_over_z(inner, _z_law(model))
    return _result(e.value, d, "discrete-flux", e.error, _grid_domain(model.discrete))


def peace_phi(grid: DiscreteGrid | StructuralModel, phi: np.ndarray, z=()) -> float:
    """Sum over cubes and axes of dif_i * phi_i * Vol(F_i) for a per-cube field phi.

    ``phi`` has shape ``cells + (n_active,)``.
    """
    grid = _grid(grid)
    _, g = grid.tables(z)
    difs = dif_arrays(grid.supports, g)
    vols = face_volumes(grid.supports)
    phi = np.asarray(phi, dtype=float)
    return float(sum(np.sum(df * v * phi[..., i]) for i, (df, v) in enumerate(zip(difs, vols))))


def signed_discrete_piev(grid: DiscreteGrid | StructuralModel, z=(), d: float = 1.0, sign: str = "+") -> float:
    """Positive or negative part of the one-dimensional PFlux sum, omega * (dif * Vol)^+-."""
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    grid = _grid(grid)
    active = _active(grid.shape)
    if len(active) != 1:
        raise ModelError("signed discrete effects are defined only for one-dimensional grids")
    pmf, g = grid.tables(z)
    flux = dif_arrays(grid.supports, g)[0] * face_volumes(grid.supports)[0]
    w = omega_array(grid.supports, pmf, d)
    s = 1.0 if sign == "+" else -1.0
    return math.fsum((w * np.maximum(s * flux, 0.0)).ravel())


@dataclass
class OracleOutcome:
    value: float
    aligned: float
    best_random: float
    closed_form: float
    samples: int


def _random_feasible(rng, w: np.ndarray, n: int) -> np.ndarray:
    v = rng.standard_normal(w.shape + (n,))
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    norm[norm == 0] = 1.0
    radius = rng.random(w.shape)[..., None] ** (1.0 / n)
    return v / norm * radius * w[..., None]


def phi_oracle_discrete(
    model: StructuralModel,
    d: float,
    budget: int = 32,
    seed: int = 0,
    z=None,
) -> OracleOutcome:
    """Supremum of the phi-pairing over per-cube fields with |phi| <= omega.

    ``budget`` random feasible fields are drawn and compared with the
    aligned field omega * Flux / |Flux|, which attains the bound.  For a
    conditional model each z is handled separately and the outcome is the
    Z expectation.
    """
    if budget < 1:
        raise ValueError("oracle budget must be at least 1")
    grid = _grid(model)
    cells = int(np.prod([len(s) - 1 for s in grid.supports if len(s) >= 2]))
    if cells > MAX_ORACLE_CUBES:
        raise ValueError(f"{cells} cubes exceed the oracle limit of {MAX_ORACLE_CUBES}")
    rng = np.random.default_rng(seed)
    if isinstance(model, StructuralModel):
        law = _z_law(model)
        if law.kind == "none":
            zs, probs = [np.zeros(0)], [1.0]
        elif law.kind == "table":
            zs, probs = list(law.points), list(law.probs)
        else:
            zs = list(law.points)
            probs = [1.0 / len(zs)] * len(zs)
    else:
        zs, probs = [np.zeros(0) if z is None else np.asarray(z)], [1.0]
    out = np.zeros(4)
    for zk, pk in zip(zs, probs):
        pmf, g = grid.tables(zk)
        difs = dif_arrays(grid.supports, g)
        vols = face_volumes(grid.supports)
        w = omega_array(grid.supports, pmf, d)
        flux = np.stack([df * v for df, v in zip(difs, vols)], axis=-1)
        n = flux.shape[-1]
        closed = float(np.sum(w * np.linalg.norm(flux, axis=-1)))
        fnorm = np.linalg.norm(flux, axis=-1, keepdims=True)
        aligned_phi = np.where(fnorm > 0, w[..., None] * flux / np.where(fnorm > 0, fnorm, 1.0), 0.0)
        aligned = float(np.sum(flux * aligned_phi))
        best = -math.inf
        for _ in range(budget):
            phi = _random_feasible(rng, w, n)
            best = max(best, float(np.sum(flux * phi)))
        best = max(best, 0.0)
        out += pk * np.array([max(aligned, best), aligned, best, closed])
    return OracleOutcome(float(out[0]), float(out[1]), float(out[2]), float(out[3]), budget)


# --------------------------------------------------------- continuous bridge


def _lattice_boxes(model: StructuralModel, z, d, policy) -> tuple[DomainBox, ...]:
    from .continuous import integration_boxes

    return integration_boxes(model, z, d, policy)


def _refined_value(model: StructuralModel, box: DomainBox, cells: Sequence[int], z, d: float) -> float:
    axes = [np.linspace(lo, hi, c + 1) for (lo, hi), c in zip(box.bounds, cells)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    g = model.g(pts, z).reshape(mesh[0].shape)
    difs = dif_arrays(axes, g)
    vols = face_volumes(axes)
    lower = np.meshgrid(*[a[:-1] for a in axes], indexing="ij")
    lpts = np.stack([m.ravel() for m in lower], axis=1)
    w = model.weight(lpts, z, d).reshape(lower[0].shape)
    return math.fsum((w * _flux_norm(difs, vols)).ravel())


def grid_refine_peace(
    model: StructuralModel,
    resolutions: Sequence,
    d: float = 1.0,
    z=None,
    policy: TruncationPolicy | None = None,
) -> list[tuple[tuple[int, ...], float]]:
    """Discrete flux sums of a continuous model on successively finer lattices.

    Each box of the (truncated) x-domain is split into uniform cells; the
    weight of a cell is f^{2d} at its lower corner.  For conditional models
    without an explicit z the values are Z expectations times the model's
    normalizer, matching ``peace``.
    """
    if model.is_discrete:
        raise ModelError("grid refinement needs a continuous model")
    out = []
    for res in resolutions:
        cells = (int(res),) * model.nx if np.isscalar(res) else tuple(int(c) for c in res)
        if len(cells) != model.nx or min(cells) < 2:
            raise ValueError(f"resolution {res!r} must give at least 2 cells on every axis")

        def per_z(zv):
            boxes = _lattice_boxes(model, zv, d, policy)
            return math.fsum(_refined_value(model, b, cells, zv, d) for b in boxes)

        if z is not None or not model.is_conditional:
            value = per_z(np.zeros(0) if z is None else np.asarray(z, dtype=float))
        else:
            value = model.norm_factor(d) * expect_over_z(per_z, model.z_dist).value
        out.append((cells, value))
    return out
