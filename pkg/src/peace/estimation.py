"""Effects estimated from samples.

The conditional density f(x|z) is a product-Gaussian kernel estimate of the
joint (X, Z) divided by the kernel estimate of Z, with Silverman bandwidths.
E(Y | X, Z) is a local-linear regression with the same kernels.  The
per-z variation replaces the structural gradient by the gradient of the
fitted conditional mean:

    integral over the x-range of |d E(Y|x,z)/dx| f(x|z)^{2d} dx

which identifies the effect when Y is separable in Z and the usual
conditional independence holds.  Those assumptions cannot be checked from
observational data, and results say so.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .continuous import PeaceResult
from .domain import DomainBox
from .model import power_weight
from .quadrature import QuadratureSpec, nodes_1d, tensor_nodes

__all__ = [
    "EstimationError",
    "SampleTable",
    "EstimatedDensity",
    "EstimatedConditionalMean",
    "silverman_bandwidth",
    "fit_conditional_density",
    "fit_conditional_mean",
    "identifiable_piev",
    "peace_from_data",
    "sweep_from_data",
    "DATA_QUAD",
    "ASSUMPTIONS",
]

MIN_ROWS = 30
DATA_QUAD = QuadratureSpec(points=8, panels=4)
QUANTILES = (0.005, 0.995)
ASSUMPTIONS = "separability in Z and conditional independence are assumed, not verified"
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class SampleTable:
    x: np.ndarray  # (N, n_x)
    z: np.ndarray  # (N, n_z)
    y: np.ndarray | None = None  # (N,)
    x_names: tuple[str, ...] = ("x",)
    z_names: tuple[str, ...] = ()
    y_name: str = "y"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        x = x.reshape(len(x), -1)
        z = np.asarray(self.z, dtype=float).reshape(len(x), -1) if np.size(self.z) else np.zeros((len(x), 0))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).ravel()
            if len(y) != len(x):
                raise EstimationError("y column length differs from x")
            object.__setattr__(self, "y", y)
        if len(self.x_names) != x.shape[1] or len(self.z_names) != z.shape[1]:
            object.__setattr__(self, "x_names", tuple(f"x{i + 1}" for i in range(x.shape[1])))
            object.__setattr__(self, "z_names", tuple(f"z{i + 1}" for i in range(z.shape[1])))
        for name, arr in (("x", x), ("z", z), ("y", self.y)):
            if arr is not None and np.isnan(arr).any():
                raise EstimationError(f"missing values in the {name} columns")

    @property
    def n(self) -> int:
        return len(self.x)

    @classmethod
    def from_csv(cls, path: str | Path, x: Sequence[str], z: Sequence[str] = (), y: str | None = None) -> "SampleTable":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames:
                raise EstimationError(f"{path}: header row required")
            wanted = list(x) + list(z) + ([y] if y else [])
            missing = [c for c in wanted if c not in reader.fieldnames]
            if missing:
                raise EstimationError(f"{path}: no column(s) {missing}")
            rows = []
            for r in reader:
                try:
                    rows.append([float(r[c]) if r[c] not in ("", None) else math.nan for c in wanted])
                except ValueError as err:
                    raise EstimationError(f"{path}: non-numeric value ({err})") from err
        data = np.array(rows, dtype=float).reshape(-1, len(wanted))
        nx, nz = len(x), len(z)
        return cls(
            data[:, :nx],
            data[:, nx : nx + nz],
            data[:, -1] if y else None,
            tuple(x),
            tuple(z),
            y or "y",
        )

    def require(self, n_min: int = MIN_ROWS, need_y: bool = False) -> None:
        if self.n < n_min:
            raise EstimationError(f"need at least {n_min} rows, got {self.n}")
        if need_y and self.y is None:
            raise EstimationError("a y column is required")


def silverman_bandwidth(col: np.ndarray) -> float:
    col = np.asarray(col, dtype=float)
    sd = float(np.std(col, ddof=1))
    if not sd > 0:
        raise EstimationError("zero-variance column: bandwidth undefined")
    return 1.06 * sd * len(col) ** (-0.2)


def _kernel_matrix(query: np.ndarray, ref: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Product Gaussian kernel values, shape (M, N), normalised per axis."""
    expo = np.zeros((len(query), len(ref)))
    for j in range(ref.shape[1]):
        u = (query[:, j, None] - ref[None, :, j]) / h[j]
        expo += u * u
    return np.exp(-0.5 * expo) / float(np.prod(h * _SQRT_2PI))


@dataclass(frozen=True)
class EstimatedDensity:
    """f(x|z) = joint KDE(x, z) / KDE(z) with Silverman bandwidths."""

    x_ref: np.ndarray
    z_ref: np.ndarray
    hx: np.ndarray
    hz: np.ndarray

    def z_weights(self, z) -> np.ndarray:
        """Normalised kernel weights of the reference rows at z."""
        if self.z_ref.shape[1] == 0:
            return np.full(len(self.x_ref), 1.0 / len(self.x_ref))
        z = np.asarray(z, dtype=float).reshape(1, -1)
        k = _kernel_matrix(z, self.z_ref, self.hz)[0]
        total = k.sum()
        if not total > 0:
            raise EstimationError(f"z = {z.ravel().tolist()} is outside the data support")
        return k / total

    def __call__(self, x_pts, z=()) -> np.ndarray:
        x = np.asarray(x_pts, dtype=float).reshape(-1, self.x_ref.shape[1])
        w = self.z_weights(z)
        return _kernel_matrix(x, self.x_ref, self.hx) @ w

    def marginal_z(self, z) -> float:
        if self.z_ref.shape[1] == 0:
            return 1.0
        z = np.asarray(z, dtype=float).reshape(1, -1)
        return float(_kernel_matrix(z, self.z_ref, self.hz).mean())


def fit_conditional_density(data: SampleTable) -> EstimatedDensity:
    data.require()
    hx = np.array([silverman_bandwidth(c) for c in data.x.T])
    hz = np.array([silverman_bandwidth(c) for c in data.z.T])
    return EstimatedDensity(data.x, data.z, hx, hz)


@dataclass(frozen=True)
class EstimatedConditionalMean:
    """Local-linear estimate of E(Y | X, Z) with Gaussian product weights."""

    ref: np.ndarray  # (N, p) columns x then z
    y: np.ndarray
    h: np.ndarray
    nx: int

    def fit_at(self, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Level and slope (in the original units) at each query row."""
        q = np.asarray(query, dtype=float).reshape(-1, self.ref.shape[1])
        w = _kernel_matrix(q, self.ref, self.h)  # (M, N)
        p = self.ref.shape[1]
        # weighted moments of the scaled reference, shifted to each query
        r = self.ref / self.h
        c = q / self.h
        rr = (r[:, :, None] * r[:, None, :]).reshape(len(r), p * p)
        s0 = w.sum(axis=1)
        m1 = w @ r
        m2 = (w @ rr).reshape(-1, p, p)
        wy = w @ self.y
        A = np.empty((len(q), p + 1, p + 1))
        b = np.empty((len(q), p + 1))
        A[:, 0, 0] = s0
        A[:, 0, 1:] = m1 - s0[:, None] * c
        A[:, 1:, 0] = A[:, 0, 1:]
        A[:, 1:, 1:] = (
            m2
            - m1[:, :, None] * c[:, None, :]
            - c[:, :, None] * m1[:, None, :]
            + s0[:, None, None] * c[:, :, None] * c[:, None, :]
        )
        b[:, 0] = wy
        b[:, 1:] = w @ (r * self.y[:, None]) - wy[:, None] * c
        # tiny ridge keeps sparse neighbourhoods solvable
        scale = np.maximum(A[:, 0, 0], 1e-300)
        A[:, 1:, 1:] += 1e-10 * scale[:, None, None] * np.eye(p)
        try:
            sol = np.linalg.solve(A, b[..., None])[..., 0]
        except np.linalg.LinAlgError as err:
            raise EstimationError(f"local-linear system is singular ({err})") from err
        return sol[:, 0], sol[:, 1:] / self.h

    def __call__(self, x_pts, z=()) -> np.ndarray:
        x = np.asarray(x_pts, dtype=float).reshape(-1, self.nx)
        z = np.asarray(z, dtype=float).ravel()
        q = np.hstack([x, np.broadcast_to(z, (len(x), len(z)))])
        return self.fit_at(q)[0]

    def gradient_x(self, x_pts, z=(), step: np.ndarray | None = None) -> np.ndarray:
        """Central differences of the fitted mean, step half a bandwidth per axis."""
        x = np.asarray(x_pts, dtype=float).reshape(-1, self.nx)
        step = 0.5 * self.h[: self.nx] if step is None else np.asarray(step)
        shifted = []
        for i in range(self.nx):
            up, dn = x.copy(), x.copy()
            up[:, i] += step[i]
            dn[:, i] -= step[i]
            shifted += [up, dn]
        vals = self(np.vstack(shifted), z).reshape(2 * self.nx, len(x))
        return np.stack([(vals[2 * i] - vals[2 * i + 1]) / (2.0 * step[i]) for i in range(self.nx)], axis=1)


def fit_conditional_mean(data: SampleTable) -> EstimatedConditionalMean:
    data.require(need_y=True)
    ref = np.hstack([data.x, data.z])
    h = np.array([silverman_bandwidth(c) for c in ref.T])
    return EstimatedConditionalMean(ref, data.y, h, data.x.shape[1])


def _weighted_quantile(values: np.ndarray, weights: np.ndarray, qs) -> np.ndarray:
    order = np.argsort(values)
    v, w = values[order], weights[order]
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    return np.array([v[min(int(np.searchsorted(cdf, q)), len(v) - 1)] for q in qs])


def x_range(density: EstimatedDensity, z) -> DomainBox:
    """Kernel-weighted 0.5% to 99.5% quantile box of X around z."""
    w = density.z_weights(z)
    bounds = []
    for j in range(density.x_ref.shape[1]):
        lo, hi = _weighted_quantile(density.x_ref[:, j], w, QUANTILES)
        if not hi > lo:
            raise EstimationError("degenerate x range at this z")
        bounds.append((lo, hi))
    return DomainBox(tuple(bounds))


@dataclass
class _Fits:
    density: EstimatedDensity
    mean: EstimatedConditionalMean


def _fits(data: SampleTable, density=None, mean=None) -> _Fits:
    return _Fits(density or fit_conditional_density(data), mean or fit_conditional_mean(data))


def identifiable_piev(
    data: SampleTable,
    z=(),
    d: float = 0.0,
    spec: QuadratureSpec | None = None,
    density: EstimatedDensity | None = None,
    mean: EstimatedConditionalMean | None = None,
) -> PeaceResult:
    """Integral of |grad_x E(Y|x,z)| f(x|z)^{2d} over the kernel-weighted x range."""
    if not d >= 0:
        raise ValueError("degree must be non-negative")
    fits = _fits(data, density, mean)
    spec = spec or DATA_QUAD
    z = np.asarray(z, dtype=float).ravel()
    box = x_range(fits.density, z)

    fine = [nodes_1d(lo, hi, spec.points, spec.panels, spec.rule) for lo, hi in box.bounds]
    coarse_spec = spec.coarse()
    coarse = [nodes_1d(lo, hi, coarse_spec.points, coarse_spec.panels, spec.rule) for lo, hi in box.bounds]
    pf, wf = tensor_nodes(fine)
    pc, wc = tensor_nodes(coarse)
    if len(pf) > spec.budget:
        raise EstimationError(f"{len(pf)} nodes exceed the budget of {spec.budget}")
    pts = np.vstack([pf, pc])
    # one batch of fits serves the value, its error estimate and the diagnostics
    gnorm = np.linalg.norm(fits.mean.gradient_x(pts, z), axis=1)
    dens = fits.density(pts, z)
    if not np.all(np.isfinite(gnorm)):
        raise EstimationError("fitted conditional mean is not finite on the x range")
    weight = np.ones_like(dens) if d == 0 else power_weight(dens, d)
    vals = gnorm * weight
    nf = len(pf)
    value = float(np.sum(vals[:nf] * wf))
    error = abs(value - float(np.sum(vals[nf:] * wc)))
    mass = float(np.sum(dens[:nf] * wf))
    avg = float(np.sum(gnorm[:nf] * dens[:nf] * wf)) / mass
    details = {"mean_gradient": avg, "density_mass": mass, "assumptions": ASSUMPTIONS}
    if d > 1:
        details["warning"] = "degree above 1 amplifies density estimation error"
    return PeaceResult(value, float(d), "identifiable", error, [box.to_json()], details)


def _z_sample(data: SampleTable, count: int, seed: int) -> np.ndarray:
    if data.z.shape[1] == 0:
        return np.zeros((1, 0))
    rng = np.random.default_rng(seed)
    k = min(count, data.n)
    return data.z[np.sort(rng.choice(data.n, k, replace=False))]


def sweep_from_data(
    data: SampleTable,
    degrees: Sequence[float],
    seed: int = 42,
    z_samples: int = 64,
    spec: QuadratureSpec | None = None,
) -> list[PeaceResult]:
    """peace_from_data at several degrees, sharing the fits and the Z subsample."""
    data.require(need_y=True)
    if any(d < 0 for d in degrees):
        raise ValueError("degrees must be non-negative")
    fits = _fits(data)
    zs = _z_sample(data, z_samples, seed)
    conditional = data.z.shape[1] > 0
    out = []
    for d in degrees:
        if d > 1:
            warnings.warn("degree above 1 amplifies density estimation error", RuntimeWarning, stacklevel=2)
        vals, grads = [], []
        for z in zs:
            r = identifiable_piev(data, z, d, spec, fits.density, fits.mean)
            vals.append(r.value)
            grads.append(r.details["mean_gradient"])
        vals = np.array(vals)
        k = 4.0**d if conditional else 1.0
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        details = {
            "stderr": k * se,
            "z_samples": len(vals),
            "mean_gradient": float(np.mean(grads)),
            "normalizer": k,
            "assumptions": ASSUMPTIONS,
        }
        if d > 1:
            details["warning"] = "degree above 1 amplifies density estimation error"
        out.append(PeaceResult(k * float(vals.mean()), float(d), "identifiable", k * se, [], details))
    return out


def peace_from_data(
    data: SampleTable,
    d: float = 0.0,
    seed: int = 42,
    z_samples: int = 64,
    spec: QuadratureSpec | None = None,
) -> PeaceResult:
    """4^d (for data with Z columns) times the mean of identifiable_piev over a Z subsample."""
    return sweep_from_data(data, [d], seed, z_samples, spec)[0]
