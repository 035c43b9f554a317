"""Variational lower bound: sup of the integral of g_in div(phi) over |phi| <= f^{2d}.

phi is a vector field in the tensor-product C^1 cubic Hermite family on a
uniform knot grid: each axis carries value functions at the interior knots
and slope functions at every knot, all vanishing on the boundary of the
box.  The objective is linear in the coefficients,

    J = sum_b c_b . a_b,   a_{b,i} = integral of g * d/dx_i Psi_b,

where the derivative of the basis is taken analytically and the integral
uses Gauss-Legendre nodes aligned with the knot cells.  The bound
|phi| <= f^{2d} is enforced at a check grid four times denser than the
knots and at every Gauss node of the objective, so the quadrature of
-grad g . phi never exceeds the matching quadrature of |grad g| f^{2d}.
The search starts from the Hermite interpolant of the pointwise
maximiser -f^{2d} grad g / |grad g|, shrunk until feasible, and improves it
by coordinate ascent with an exact step to the constraint boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .continuous import PeaceResult, integration_boxes
from .domain import DomainBox
from .model import ModelError, StructuralModel
from .quadrature import QuadratureSpec, TruncationPolicy

__all__ = ["WeightFunction", "hermite_basis", "variational_oracle"]

CHECK_DENSITY = 4
NODES_PER_CELL = 8
MAX_DIM = 3


def hermite_basis(knots: np.ndarray, x: np.ndarray, derivative: bool = False) -> np.ndarray:
    """C^1 cubic Hermite basis on a uniform knot grid, evaluated at x.

    Rows are the value functions of the interior knots followed by the slope
    functions of all knots (scaled to unit derivative at their knot).  Every
    function vanishes at both ends of the grid and outside it.  Returns an
    array of shape ``(2 K - 2, len(x))``.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    K = len(knots)
    h = knots[1] - knots[0]
    cell = np.clip(np.floor((x - knots[0]) / h).astype(int), 0, K - 2)
    s = (x - knots[cell]) / h
    inside = (x >= knots[0]) & (x <= knots[-1])
    if derivative:
        h00 = (6 * s * s - 6 * s) / h
        h01 = -h00
        h10 = 3 * s * s - 4 * s + 1
        h11 = 3 * s * s - 2 * s
    else:
        h01 = s * s * (3 - 2 * s)
        h00 = 1 - h01
        h10 = h * s * (1 - s) ** 2
        h11 = h * s * s * (s - 1)
    out = np.zeros((2 * K - 2, len(x)))
    for k in range(K):
        left = inside & (cell == k - 1)  # knot k is the right end of this cell
        right = inside & (cell == k)
        if 1 <= k <= K - 2:
            out[k - 1, left] = h01[left]
            out[k - 1, right] = h00[right]
        row = K - 2 + k
        out[row, left] = h11[left]
        out[row, right] = h10[right]
    return out


def basis_cells(K: int) -> list[tuple[int, int]]:
    """First and last knot cell in the support of each basis row."""
    rows = [(k - 1, k) for k in range(1, K - 1)]
    rows += [(max(k - 1, 0), min(k, K - 2)) for k in range(K)]
    return rows


def _contract(tensor: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Apply ``mats[j]`` (shape (R_j, M_j)) along axis j of ``tensor``."""
    out = tensor
    for j, m in enumerate(mats):
        out = np.moveaxis(np.tensordot(m, out, axes=([1], [j])), 0, j)
    return out


def _gauss_nodes(knots: np.ndarray):
    t, w = np.polynomial.legendre.leggauss(NODES_PER_CELL)
    t, w = (t + 1) / 2, w / 2
    h = np.diff(knots)
    return (knots[:-1, None] + h[:, None] * t[None, :]).ravel(), (h[:, None] * w[None, :]).ravel()


def _check_axis(knots: np.ndarray) -> np.ndarray:
    """Uniform points four per knot cell plus the objective's Gauss nodes."""
    uniform = np.linspace(knots[0], knots[-1], CHECK_DENSITY * (len(knots) - 1) + 1)
    return np.unique(np.concatenate([uniform, _gauss_nodes(knots)[0]]))


def _mesh_points(axes: Sequence[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class WeightFunction:
    """phi = sum_b c_b Psi_b; one coefficient vector per tensor basis function."""

    box: DomainBox
    knots: list[np.ndarray]
    coefficients: np.ndarray  # shape (2K-2,)*n + (n,)
    check_points: list[np.ndarray] = field(default_factory=list)
    clip_bound: np.ndarray | None = None  # f^{2d} on the check grid

    @classmethod
    def zeros(cls, box: DomainBox, knots_per_axis: int) -> "WeightFunction":
        if knots_per_axis < 3:
            raise ValueError("need at least 3 knots per axis")
        if not box.bounded:
            raise ValueError("weight functions live on bounded boxes")
        K = knots_per_axis
        knots = [np.linspace(lo, hi, K) for lo, hi in box.bounds]
        n = box.ndim
        coef = np.zeros((2 * K - 2,) * n + (n,))
        checks = [_check_axis(k) for k in knots]
        return cls(box, knots, coef, checks)

    @property
    def ndim(self) -> int:
        return self.box.ndim

    def _eval(self, pts, derivative_axis: int | None = None) -> list[np.ndarray]:
        return [
            hermite_basis(k, pts[:, j], derivative=(j == derivative_axis))
            for j, k in enumerate(self.knots)
        ]

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        rows = self._eval(pts)
        out = np.tensordot(rows[0].T, self.coefficients, axes=([1], [0]))
        for r in rows[1:]:
            out = np.einsum("pb,pb...->p...", r.T, out)
        return out

    def divergence(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        total = np.zeros(len(pts))
        for i in range(self.ndim):
            rows = self._eval(pts, derivative_axis=i)
            out = np.tensordot(rows[0].T, self.coefficients[..., i], axes=([1], [0]))
            for r in rows[1:]:
                out = np.einsum("pb,pb...->p...", r.T, out)
            total += out
        return total

    def on_check_grid(self) -> np.ndarray:
        rows = [hermite_basis(k, c) for k, c in zip(self.knots, self.check_points)]
        return _contract(self.coefficients, [r.T for r in rows])

    def max_violation(self) -> float:
        """max over the check grid of |phi| - clip bound (<= 0 when feasible)."""
        mag = np.linalg.norm(self.on_check_grid(), axis=-1)
        return float(np.max(mag - self.clip_bound))


def _objective_vectors(model: StructuralModel, z, wf: WeightFunction) -> np.ndarray:
    """a_{b,i} = integral over the box of g * d/dx_i Psi_b."""
    nodes, weights = zip(*(_gauss_nodes(k) for k in wf.knots))
    shape = tuple(len(x) for x in nodes)
    g = model.g(_mesh_points(nodes), z).reshape(shape)
    if not np.all(np.isfinite(g)):
        raise ModelError("g_in is not finite on the oracle box")
    for j, wt in enumerate(weights):
        sh = [1] * g.ndim
        sh[j] = -1
        g = g * wt.reshape(sh)
    vals = [hermite_basis(k, x) for k, x in zip(wf.knots, nodes)]
    ders = [hermite_basis(k, x, derivative=True) for k, x in zip(wf.knots, nodes)]
    n = wf.ndim
    comps = [_contract(g, [ders[j] if j == i else vals[j] for j in range(n)]) for i in range(n)]
    return np.stack(comps, axis=-1)


class _Ascent:
    """Coordinate moves on basis coefficients keeping |phi| <= bound on the check grid."""

    def __init__(self, wf: WeightFunction, a: np.ndarray, bound: np.ndarray):
        self.wf = wf
        self.a = a
        self.n = wf.ndim
        self.bound = bound
        K = len(wf.knots[0])
        self.cells = basis_cells(K)
        self.psi = [hermite_basis(k, c) for k, c in zip(wf.knots, wf.check_points)]
        self.phi = wf.on_check_grid()
        # index range of check points inside each basis support, per axis
        self.ranges = []
        for k, c in zip(wf.knots, wf.check_points):
            lo = np.searchsorted(c, k[[a for a, _ in self.cells]] - 1e-12 * (1 + abs(k[-1])), "left")
            hi = np.searchsorted(c, k[[b + 1 for _, b in self.cells]] + 1e-12 * (1 + abs(k[-1])), "right")
            self.ranges.append(list(zip(lo, hi)))

    def support(self, idx):
        sl = tuple(slice(*self.ranges[j][b]) for j, b in enumerate(idx))
        local = self.psi[0][idx[0], sl[0]]
        for j in range(1, self.n):
            local = np.multiply.outer(local, self.psi[j][idx[j], sl[j]])
        return sl, local

    def apply(self, idx, new):
        sl, local = self.support(idx)
        delta = np.asarray(new, dtype=float) - self.wf.coefficients[idx]
        self.phi[sl] += local[..., None] * delta
        self.wf.coefficients[idx] = new

    def refresh(self):
        self.phi = self.wf.on_check_grid()

    def max_step(self, idx, u) -> float | None:
        """Largest t with |phi - Psi c_old + t Psi u| <= bound on the support.

        Returns None when no point of the line through the other
        coefficients along u is feasible.
        """
        sl, local = self.support(idx)
        rest = self.phi[sl] - local[..., None] * self.wf.coefficients[idx]
        mask = local != 0
        if not mask.any():
            return None
        p = local[mask]
        r = rest[mask]
        wv = self.bound[sl][mask]
        ru = r @ u
        rr = np.sum(r * r, axis=-1)
        excess = rr - wv * wv
        # points sitting on the bound up to rounding count as feasible
        excess = np.where(excess <= 1e-12 * wv * wv, np.minimum(excess, 0.0), excess)
        disc = ru * ru - excess
        if np.any(disc < 0):
            return None
        root = np.sqrt(disc)
        bounds_a = (-ru + root) / p
        bounds_b = (-ru - root) / p
        hi = float(np.min(np.maximum(bounds_a, bounds_b)))
        lo = float(np.max(np.minimum(bounds_a, bounds_b)))
        if hi < lo:
            return None
        # pull back slightly towards the interior of the feasible interval
        return hi - 1e-12 * (hi - lo)

    def objective(self) -> float:
        return float(np.sum(self.a * self.wf.coefficients))


def _ideal(model, z, d, pts) -> np.ndarray:
    grad = model.grad_x(pts, z)
    norm = np.linalg.norm(grad, axis=1, keepdims=True)
    W = model.weight(pts, z, d)[:, None]
    out = np.where(norm > 0, -grad / np.where(norm > 0, norm, 1.0), 0.0) * W
    return np.nan_to_num(out)


def _initial_guess(model, z, d, wf: WeightFunction, ascent: _Ascent) -> None:
    """Hermite interpolant of the pointwise maximiser, shrunk until feasible.

    Value coefficients take the maximiser at the interior knots; slope
    coefficients take its (mixed) partial derivatives by central differences
    with step h/4 along the slope axes.  Slopes at the boundary knots are set
    so each boundary cell follows the ramp 1 - (1 - s)^3, which loses only a
    quarter cell of mass against the boundary.
    """
    n = wf.ndim
    K = len(wf.knots[0])
    h = np.array([k[1] - k[0] for k in wf.knots])
    delta = h / 4.0
    coef = np.zeros_like(wf.coefficients)
    kinds = [("v", np.arange(1, K - 1)), ("s", np.arange(K))]
    for combo in np.ndindex(*(2,) * n):
        knot_sets = [wf.knots[j][kinds[c][1]] for j, c in enumerate(combo)]
        base = _mesh_points(knot_sets)
        slope_axes = [j for j, c in enumerate(combo) if c == 1]
        acc = np.zeros((len(base), n))
        for signs in np.ndindex(*(2,) * len(slope_axes)):
            shift = np.zeros(n)
            sgn = 1.0
            for j, s in zip(slope_axes, signs):
                shift[j] = delta[j] if s == 0 else -delta[j]
                sgn *= 1.0 if s == 0 else -1.0
            pts = base + shift
            pts = np.clip(pts, wf.box.lower, wf.box.upper)
            acc += sgn * _ideal(model, z, d, pts)
        for j in slope_axes:
            acc /= 2.0 * delta[j]
        offsets = [0 if c == 0 else K - 2 for c in combo]
        sizes = [K - 2 if c == 0 else K for c in combo]
        block = tuple(slice(o, o + s) for o, s in zip(offsets, sizes))
        coef[block] = acc.reshape(tuple(sizes) + (n,))
    # boundary cells: ramp 1 - (1 - s)^3 up to the first interior value
    for j in range(n):
        for knot, value_row, sgn in ((0, 0, 1.0), (K - 1, K - 3, -1.0)):
            dst = [slice(None)] * n
            src = [slice(None)] * n
            dst[j] = K - 2 + knot
            src[j] = value_row
            coef[tuple(dst)] = sgn * 3.0 / h[j] * coef[tuple(src)]
    basis_idx = list(np.ndindex(*coef.shape[:-1]))
    for _ in range(60):
        wf.coefficients[...] = coef
        ascent.refresh()
        mag = np.linalg.norm(ascent.phi, axis=-1)
        excess = mag > ascent.bound
        if not excess.any():
            return
        ratio = np.where(excess, ascent.bound / np.where(mag > 0, mag, 1.0), 1.0)
        for idx in basis_idx:
            if not np.any(coef[idx]):
                continue
            sl, local = ascent.support(idx)
            r = ratio[sl][local != 0]
            if len(r):
                coef[idx] *= float(np.min(r)) * (1.0 - 1e-9)
    wf.coefficients[...] = 0.0
    ascent.refresh()


def _oracle_box(model, box: DomainBox, z, d, knots, budget, rng, tol):
    wf = WeightFunction.zeros(box, knots)
    check = _mesh_points(wf.check_points)
    shape = tuple(len(c) for c in wf.check_points)
    bound = model.weight(check, z, d).reshape(shape)
    if not np.any(bound > 0):
        raise ModelError("clip bound f^{2d} vanishes on the whole box")
    wf.clip_bound = bound
    a = _objective_vectors(model, z, wf)
    ascent = _Ascent(wf, a, bound)
    _initial_guess(model, z, d, wf, ascent)
    if ascent.objective() < 0:
        wf.coefficients[...] = 0.0
        ascent.refresh()
    basis_idx = list(np.ndindex(*a.shape[:-1]))
    sweeps = 0
    for sweeps in range(1, budget + 1):
        improved = 0.0
        for j in rng.permutation(len(basis_idx)):
            idx = basis_idx[j]
            ak = a[idx]
            na = float(np.linalg.norm(ak))
            if na == 0.0:
                continue
            u = ak / na
            t = ascent.max_step(idx, u)
            if t is None:
                continue
            gain = t * na - float(ak @ wf.coefficients[idx])
            if gain > 0:
                ascent.apply(idx, t * u)
                improved += gain
        if improved <= tol * max(abs(ascent.objective()), 1e-300):
            break
    return wf, ascent.objective(), sweeps


def variational_oracle(
    model: StructuralModel,
    z=(),
    d: float = 1.0,
    budget: int = 500,
    knots: int = 9,
    seed: int = 0,
    policy: TruncationPolicy | None = None,
    spec: QuadratureSpec | None = None,
    tol: float = 1e-12,
) -> PeaceResult:
    """Best value of the integral of g_in div(phi) found by coordinate ascent.

    ``budget`` is the number of ascent sweeps over all basis functions
    (visited in a seeded random order).  The value is a lower bound for
    piev on the same model and degree; no normalizer is applied.
    """
    if budget < 1:
        raise ValueError("oracle budget must be at least one sweep")
    if model.is_discrete:
        raise ModelError("the variational oracle needs a continuous model")
    if model.nx > MAX_DIM:
        raise ModelError(f"the oracle supports at most {MAX_DIM} cause variables")
    z = np.asarray(z, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    boxes = integration_boxes(model, z, d, policy, spec)
    parts, sweeps, fields = [], 0, []
    for box in boxes:
        wf, value, used = _oracle_box(model, box, z, d, knots, budget, rng, tol)
        parts.append(max(value, 0.0))
        sweeps = max(sweeps, used)
        fields.append(wf)
    return PeaceResult(
        math.fsum(parts),
        float(d),
        "variational-oracle",
        0.0,
        [b.to_json() for b in boxes],
        {"knots": knots, "sweeps": sweeps, "weights": fields},
    )
