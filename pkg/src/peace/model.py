"""Structural causal models: the structural function, densities, Z laws, grids.

A model is immutable.  Points are passed around as ``(N, n_x)`` arrays of
cause values together with a single conditioning vector ``z`` of shape
``(n_z,)`` (empty for unconditional models).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import expr as ex
from .domain import DomainBox, parse_bound
from .quadrature import (
    IntegrationError,
    QuadratureSpec,
    TruncationPolicy,
    integrate_box,
    nodes_1d,
    tensor_nodes,
    truncate_domain,
)

__all__ = [
    "ModelError",
    "ConditionalDensity",
    "ZDistribution",
    "DiscreteGrid",
    "StructuralModel",
    "ValidationReport",
    "load_model",
    "model_from_dict",
    "validate_model",
    "power_weight",
    "FD_STEP",
]

FD_STEP = 1e-5
NORMALIZERS = ("auto", "4^d", "none")


class ModelError(ValueError):
    """Malformed model declaration."""


def power_weight(f: np.ndarray, d: float) -> np.ndarray:
    """f^{2d} with 0^0 := 1, so d = 0 gives a weight of one everywhere."""
    f = np.asarray(f, dtype=float)
    if d == 0:
        return np.ones_like(f)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(f > 0, np.power(np.maximum(f, 0.0), 2.0 * d), 0.0)


def _env(names_x, x_pts, names_z, z) -> dict:
    env = {n: x_pts[:, i] for i, n in enumerate(names_x)}
    env.update({n: float(z[j]) for j, n in enumerate(names_z)})
    return env


def _as_points(x_pts, nx: int) -> np.ndarray:
    x = np.asarray(x_pts, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, nx)
    return x


def _broadcast(value, n: int) -> np.ndarray:
    return np.array(np.broadcast_to(np.asarray(value, dtype=float), (n,)))


@dataclass(frozen=True)
class ConditionalDensity:
    """f(x|z) given either as an expression or as a vectorised callable."""

    x_vars: tuple[str, ...]
    z_vars: tuple[str, ...] = ()
    expression: ex.Expr | None = None
    func: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    label: str = ""

    def __post_init__(self):
        if (self.expression is None) == (self.func is None):
            raise ModelError("a density needs exactly one of expression or func")

    @property
    def depends_on_z(self) -> bool:
        if self.expression is None:
            return bool(self.z_vars)
        return bool(ex.free_vars(self.expression) & set(self.z_vars))

    def __call__(self, x_pts, z=()) -> np.ndarray:
        x = _as_points(x_pts, len(self.x_vars))
        z = np.asarray(z, dtype=float).ravel()
        if self.func is not None:
            return _broadcast(self.func(x, z), len(x))
        return _broadcast(ex.evaluate(self.expression, _env(self.x_vars, x, self.z_vars, z)), len(x))

    def describe(self) -> str:
        return self.label or (ex.to_string(self.expression) if self.expression is not None else "callable")


@dataclass(frozen=True)
class ZDistribution:
    """Law of the conditioning vector for the outer expectation.

    kind is one of ``none`` (unconditional), ``density`` (expression over
    the z variables on ``domain``), ``table`` (points with probabilities) or
    ``samples`` (points used for a Monte-Carlo mean).
    """

    kind: str = "none"
    z_vars: tuple[str, ...] = ()
    expression: ex.Expr | None = None
    domain: DomainBox | None = None
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    probs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.kind not in ("none", "density", "table", "samples"):
            raise ModelError(f"unknown Z distribution kind {self.kind!r}")
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, max(1, len(self.z_vars)))
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        if self.kind == "density":
            if self.expression is None or self.domain is None:
                raise ModelError("a Z density needs an expression and a domain")
            if self.domain.ndim != len(self.z_vars):
                raise ModelError("Z domain dimension does not match z_vars")
        if self.kind == "table":
            if len(self.probs) != len(pts):
                raise ModelError("Z table needs one probability per point")
            if np.any(self.probs < 0):
                raise ModelError("Z table probabilities must be non-negative")
        if self.kind in ("table", "samples") and len(pts) and pts.shape[1] != len(self.z_vars):
            raise ModelError("Z points have the wrong number of coordinates")

    @classmethod
    def table(cls, z_vars, points, probs) -> "ZDistribution":
        return cls("table", tuple(z_vars), points=points, probs=probs)

    @classmethod
    def samples(cls, z_vars, points) -> "ZDistribution":
        return cls("samples", tuple(z_vars), points=points)

    @classmethod
    def density(cls, z_vars, expression, domain: DomainBox) -> "ZDistribution":
        return cls("density", tuple(z_vars), expression=expression, domain=domain)

    def density_fn(self) -> Callable[[np.ndarray], np.ndarray]:
        names = self.z_vars
        node = self.expression

        def f(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            return _broadcast(ex.evaluate(node, {n: pts[:, i] for i, n in enumerate(names)}), len(pts))

        return f


@dataclass(frozen=True)
class DiscreteGrid:
    """Tensor grid of support points with PMF and g tables for each z.

    ``pmf`` and ``g`` have shape ``(K, n_1, ..., n_m)`` where K is the
    number of conditioning points in ``z_points`` (K = 1 with an empty z
    for unconditional models).
    """

    supports: tuple[np.ndarray, ...]
    pmf: np.ndarray
    g: np.ndarray
    z_points: np.ndarray = field(default_factory=lambda: np.zeros((1, 0)))

    def __post_init__(self):
        sup = tuple(np.asarray(s, dtype=float).ravel() for s in self.supports)
        if not sup:
            raise ModelError("a grid needs at least one axis")
        for i, s in enumerate(sup):
            if len(s) == 0:
                raise ModelError(f"axis {i} has no support points")
            if np.any(np.diff(s) <= 0):
                raise ModelError(f"supports on axis {i} must be strictly increasing")
        shape = tuple(len(s) for s in sup)
        zp = np.asarray(self.z_points, dtype=float)
        if zp.ndim == 1:
            zp = zp.reshape(1, -1) if len(zp) else np.zeros((1, 0))
        pmf = np.asarray(self.pmf, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if pmf.shape == shape:
            pmf = pmf[None]
        if g.shape == shape:
            g = g[None]
        if pmf.shape != (len(zp),) + shape or g.shape != pmf.shape:
            raise ModelError(
                f"pmf/g tables must have shape {(len(zp),) + shape}, got {pmf.shape} and {g.shape}"
            )
        if np.any(~np.isfinite(pmf)) or np.any(~np.isfinite(g)):
            raise ModelError("pmf and g tables must be finite")
        if np.any(pmf < 0) or np.any(pmf > 1):
            raise ModelError("pmf entries must lie in [0, 1]")
        object.__setattr__(self, "supports", sup)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "z_points", zp)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.supports)

    @property
    def ndim(self) -> int:
        return len(self.supports)

    def index_of_z(self, z) -> int:
        z = np.asarray(z, dtype=float).ravel()
        if self.z_points.shape[1] == 0:
            return 0
        hit = np.flatnonzero(np.all(np.abs(self.z_points - z) <= 1e-12 * (1 + np.abs(z)), axis=1))
        if len(hit) == 0:
            raise ModelError(f"no PMF/g table for z = {z.tolist()}")
        return int(hit[0])

    def tables(self, z=()) -> tuple[np.ndarray, np.ndarray]:
        k = self.index_of_z(z)
        return self.pmf[k], self.g[k]

    def transpose(self, order: Sequence[int]) -> "DiscreteGrid":
        order = list(order)
        axes = [0] + [i + 1 for i in order]
        return DiscreteGrid(
            tuple(self.supports[i] for i in order),
            self.pmf.transpose(axes),
            self.g.transpose(axes),
            self.z_points,
        )

    @classmethod
    def from_function(cls, supports, g: Callable, pmf) -> "DiscreteGrid":
        """Grid for one (unconditional) z from a vectorised g over mesh arrays."""
        mesh = np.meshgrid(*[np.asarray(s, dtype=float) for s in supports], indexing="ij")
        return cls(tuple(supports), np.asarray(pmf, dtype=float), np.asarray(g(*mesh), dtype=float))


@dataclass(frozen=True)
class StructuralModel:
    """Y = g_in(X, Z) with the law of X given Z and the law of Z.

    Exactly one of ``density`` (continuous X) or ``discrete`` must be given.
    ``x_domain`` is a tuple of pairwise disjoint boxes over X.
    ``normalizer`` selects the factor applied by PEACE after the Z
    expectation: ``auto`` is 4^d for conditional models and 1 otherwise,
    ``4^d`` and ``none`` force either choice.
    """

    x_vars: tuple[str, ...]
    z_vars: tuple[str, ...] = ()
    g_in: ex.Expr | None = None
    x_domain: tuple[DomainBox, ...] = ()
    density: ConditionalDensity | None = None
    discrete: DiscreteGrid | None = None
    z_dist: ZDistribution = field(default_factory=ZDistribution)
    normalizer: str = "auto"
    g_func: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    name: str = ""
    _grad: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        xv, zv = tuple(self.x_vars), tuple(self.z_vars)
        object.__setattr__(self, "x_vars", xv)
        object.__setattr__(self, "z_vars", zv)
        if not xv:
            raise ModelError("x_vars must be non-empty")
        if set(xv) & set(zv):
            raise ModelError(f"x_vars and z_vars overlap: {sorted(set(xv) & set(zv))}")
        if len(set(xv)) != len(xv) or len(set(zv)) != len(zv):
            raise ModelError("variable names must be unique")
        if self.normalizer not in NORMALIZERS:
            raise ModelError(f"normalizer must be one of {NORMALIZERS}")
        if (self.density is None) == (self.discrete is None):
            raise ModelError("a model needs exactly one of a density or a discrete grid")
        if self.g_in is None and self.g_func is None and self.discrete is None:
            raise ModelError("g_in is required")
        if self.g_in is not None:
            unknown = ex.free_vars(self.g_in) - set(xv) - set(zv)
            if unknown:
                raise ModelError(f"g_in uses undeclared variables {sorted(unknown)}")
        if self.discrete is not None:
            if self.discrete.ndim != len(xv):
                raise ModelError("grid dimension does not match x_vars")
            if self.discrete.z_points.shape[1] != len(zv):
                raise ModelError("grid z points do not match z_vars")
        else:
            doms = self.x_domain
            if isinstance(doms, DomainBox):
                doms = (doms,)
            doms = tuple(doms)
            if not doms:
                raise ModelError("a continuous model needs an x domain")
            for b in doms:
                if b.ndim != len(xv):
                    raise ModelError("domain dimension does not match x_vars")
            for i in range(len(doms)):
                for j in range(i + 1, len(doms)):
                    if doms[i].overlaps(doms[j]):
                        raise ModelError("domain boxes must be pairwise disjoint")
            object.__setattr__(self, "x_domain", doms)
        if zv and self.z_dist.kind == "none" and self.discrete is None:
            raise ModelError("a conditional model needs a z distribution")
        if self.z_dist.kind != "none" and tuple(self.z_dist.z_vars) != zv:
            raise ModelError("z distribution variables do not match z_vars")
        grads = None
        if self.g_in is not None and not ex.contains_call(self.g_in, "abs"):
            grads = tuple(ex.differentiate(self.g_in, v) for v in xv)
        object.__setattr__(self, "_grad", grads)

    # -------------------------------------------------------------- queries

    @property
    def nx(self) -> int:
        return len(self.x_vars)

    @property
    def nz(self) -> int:
        return len(self.z_vars)

    @property
    def is_discrete(self) -> bool:
        return self.discrete is not None

    @property
    def is_conditional(self) -> bool:
        return bool(self.z_vars)

    @property
    def gradient_mode(self) -> str:
        return "symbolic" if self._grad is not None else "finite-difference"

    @property
    def gradient_expressions(self) -> tuple | None:
        return self._grad

    def norm_factor(self, d: float) -> float:
        if self.normalizer == "none" or (self.normalizer == "auto" and not self.is_conditional):
            return 1.0
        return 4.0**d

    def g(self, x_pts, z=()) -> np.ndarray:
        x = _as_points(x_pts, self.nx)
        z = np.asarray(z, dtype=float).ravel()
        if self.g_func is not None:
            return _broadcast(self.g_func(x, z), len(x))
        if self.g_in is None:
            raise ModelError("this model has no structural expression")
        return _broadcast(ex.evaluate(self.g_in, _env(self.x_vars, x, self.z_vars, z)), len(x))

    def grad_x(self, x_pts, z=()) -> np.ndarray:
        """Gradient of g_in in the X coordinates, shape ``(N, n_x)``."""
        x = _as_points(x_pts, self.nx)
        z = np.asarray(z, dtype=float).ravel()
        if self._grad is not None and self.g_func is None:
            env = _env(self.x_vars, x, self.z_vars, z)
            with np.errstate(all="ignore"):
                cols = [_broadcast(ex.evaluate(dg, env), len(x)) for dg in self._grad]
            return np.stack(cols, axis=1)
        out = np.empty_like(x)
        for i in range(self.nx):
            h = FD_STEP * (1.0 + np.abs(x[:, i]))
            up, dn = x.copy(), x.copy()
            up[:, i] += h
            dn[:, i] -= h
            out[:, i] = (self.g(up, z) - self.g(dn, z)) / (2.0 * h)
        return out

    def f(self, x_pts, z=()) -> np.ndarray:
        if self.density is None:
            raise ModelError("discrete models have no density")
        return self.density(x_pts, z)

    def weight(self, x_pts, z, d: float) -> np.ndarray:
        """f(x|z)^{2d} with the 0^0 := 1 convention."""
        x = _as_points(x_pts, self.nx)
        if d == 0:
            return np.ones(len(x))
        return power_weight(self.f(x, z), d)

    def with_domain(self, boxes) -> "StructuralModel":
        if isinstance(boxes, DomainBox):
            boxes = (boxes,)
        return replace(self, x_domain=tuple(boxes))

    def with_density(self, density: ConditionalDensity) -> "StructuralModel":
        return replace(self, density=density)


# ------------------------------------------------------------------- loading


def _parse(source, names, params: Mapping[str, float], what: str) -> ex.Expr:
    if not isinstance(source, str):
        source = repr(float(source))
    try:
        node = ex.parse_expression(source, list(names) + list(params))
    except ex.ExpressionError as err:
        raise ModelError(f"{what}: {err}") from err
    if params:
        node = ex.substitute(node, {k: ex.Const(float(v)) for k, v in params.items()})
    return node


def _domain_boxes(spec, names) -> tuple[DomainBox, ...]:
    if spec is None:
        return (DomainBox(tuple((-math.inf, math.inf) for _ in names)),)
    if isinstance(spec, list) and spec and not isinstance(spec[0], dict):
        items = [spec]
    else:
        items = spec if isinstance(spec, list) else [spec]
    boxes = []
    for item in items:
        if isinstance(item, dict):
            bounds = [item.get(n, ["-inf", "inf"]) for n in names]
        elif len(names) == 1 and len(item) == 2 and not isinstance(item[0], (list, tuple)):
            bounds = [item]
        else:
            bounds = item
        boxes.append(DomainBox.from_bounds(bounds))
    return tuple(boxes)


def _read_points_csv(path: Path, names) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [[float(r[n]) for n in names] for r in reader]
    return np.array(rows, dtype=float).reshape(-1, len(names))


def _z_distribution(spec, z_vars, domain_spec, params, base: Path) -> ZDistribution:
    if not z_vars:
        return ZDistribution()
    if spec is None:
        raise ModelError("conditional model without z_dist")
    if isinstance(spec, str):
        spec = {"density": spec}
    if "density" in spec:
        dom = spec.get("domain")
        if dom is None and isinstance(domain_spec, dict):
            dom = {n: domain_spec[n] for n in z_vars if n in domain_spec}
        box = _domain_boxes(dom or None, z_vars)
        if len(box) != 1:
            raise ModelError("Z density domain must be a single box")
        return ZDistribution.density(z_vars, _parse(spec["density"], z_vars, params, "z_dist"), box[0])
    if "table" in spec:
        tab = spec["table"]
        return ZDistribution.table(z_vars, tab["points"], tab["probs"])
    if "samples" in spec:
        src = spec["samples"]
        if isinstance(src, str):
            pts = _read_points_csv(base / src, z_vars)
        else:
            pts = np.asarray(src, dtype=float)
        return ZDistribution.samples(z_vars, pts)
    raise ModelError("z_dist needs one of density, table or samples")


def _discrete_from_csv(path: Path, x_vars, z_vars) -> DiscreteGrid:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = list(x_vars) + list(z_vars) + ["pmf", "g"]
        missing = [c for c in cols if c not in (reader.fieldnames or [])]
        if missing:
            raise ModelError(f"discrete table lacks columns {missing}")
        rows = [[float(r[c]) for c in cols] for r in reader]
    data = np.array(rows, dtype=float)
    nx, nz = len(x_vars), len(z_vars)
    supports = [np.unique(data[:, i]) for i in range(nx)]
    zs = np.unique(data[:, nx : nx + nz], axis=0) if nz else np.zeros((1, 0))
    shape = tuple(len(s) for s in supports)
    pmf = np.full((len(zs),) + shape, np.nan)
    g = np.full_like(pmf, np.nan)
    for row in data:
        idx = tuple(int(np.searchsorted(s, v)) for s, v in zip(supports, row[:nx]))
        k = 0
        if nz:
            k = int(np.flatnonzero(np.all(zs == row[nx : nx + nz], axis=1))[0])
        if not np.isnan(pmf[(k,) + idx]):
            raise ModelError(f"duplicate grid row {row[: nx + nz].tolist()}")
        pmf[(k,) + idx] = row[-2]
        g[(k,) + idx] = row[-1]
    if np.isnan(pmf).any():
        raise ModelError("discrete table is not a full Cartesian product of the supports")
    return DiscreteGrid(tuple(supports), pmf, g, zs)


def _discrete(spec, x_vars, z_vars, g_node, density_src, params, base: Path) -> DiscreteGrid:
    if "csv" in spec:
        return _discrete_from_csv(base / spec["csv"], x_vars, z_vars)
    sup = spec["supports"]
    supports = [sup[n] for n in x_vars] if isinstance(sup, dict) else sup
    z_points = np.asarray(spec.get("z_points", np.zeros((1, 0))), dtype=float)
    if z_points.ndim == 1:
        z_points = z_points.reshape(-1, len(z_vars)) if len(z_vars) else np.zeros((1, 0))
    if len(z_vars) and z_points.shape[1] != len(z_vars):
        raise ModelError("z_points do not match z_vars")
    mesh = np.meshgrid(*[np.asarray(s, dtype=float) for s in supports], indexing="ij")
    shape = mesh[0].shape

    def table(key, node):
        src = spec.get(key)
        if src is not None and not isinstance(src, str):
            return np.asarray(src, dtype=float)
        if isinstance(src, str):
            node = _parse(src, list(x_vars) + list(z_vars), params, f"discrete {key}")
        if node is None:
            raise ModelError(f"discrete model needs a {key} table")
        out = []
        for z in z_points:
            env = {n: m for n, m in zip(x_vars, mesh)}
            env.update({n: float(v) for n, v in zip(z_vars, z)})
            out.append(np.broadcast_to(ex.evaluate(node, env), shape))
        return np.array(out)

    density_node = None
    if isinstance(density_src, str) and density_src != "estimated":
        density_node = _parse(density_src, list(x_vars) + list(z_vars), params, "pmf")
    return DiscreteGrid(tuple(supports), table("pmf", density_node), table("g", g_node), z_points)


def model_from_dict(spec: Mapping, base_dir: str | Path = ".") -> StructuralModel:
    """Build a model from the JSON structure described in the README."""
    base = Path(base_dir)
    try:
        x_vars = tuple(spec["x_vars"])
    except KeyError:
        raise ModelError("model needs x_vars") from None
    z_vars = tuple(spec.get("z_vars", ()))
    params = dict(spec.get("params", {}))
    clash = set(params) & (set(x_vars) | set(z_vars))
    if clash:
        raise ModelError(f"parameters shadow variables: {sorted(clash)}")
    names = list(x_vars) + list(z_vars)
    g_node = _parse(spec["g_in"], names, params, "g_in") if "g_in" in spec else None
    z_dist = _z_distribution(spec.get("z_dist"), z_vars, spec.get("domain"), params, base)
    normalizer = spec.get("normalizer", "auto")
    name = spec.get("name", "")
    if "discrete" in spec:
        grid = _discrete(spec["discrete"], x_vars, z_vars, g_node, spec.get("density"), params, base)
        if z_vars and z_dist.kind == "none":
            raise ModelError("conditional discrete model needs a z_dist table")
        return StructuralModel(x_vars, z_vars, g_node, (), None, grid, z_dist, normalizer, name=name)
    dens_src = spec.get("density")
    if dens_src is None:
        raise ModelError("continuous model needs a density")
    if dens_src == "estimated":
        raise ModelError('density "estimated" models are built from data with the from-data command')
    dom_spec = spec.get("domain")
    if isinstance(dom_spec, dict):
        dom_spec = {k: v for k, v in dom_spec.items() if k in x_vars}
    elif isinstance(dom_spec, list):
        dom_spec = [{k: v for k, v in b.items() if k in x_vars} if isinstance(b, dict) else b for b in dom_spec]
    boxes = _domain_boxes(dom_spec, x_vars)
    density = ConditionalDensity(x_vars, z_vars, _parse(dens_src, names, params, "density"))
    if g_node is None:
        raise ModelError("g_in is required")
    return StructuralModel(x_vars, z_vars, g_node, boxes, density, None, z_dist, normalizer, name=name)


def load_model(path: str | Path) -> StructuralModel:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ModelError(f"{path}: invalid JSON ({err})") from err
    return model_from_dict(spec, path.parent)


# ---------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    normalization: list[dict] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    gradient_mode: str = "symbolic"
    tolerance: float = 1e-6

    @property
    def normalized(self) -> bool:
        return all(r["residual"] <= self.tolerance for r in self.normalization)

    @property
    def ok(self) -> bool:
        return self.normalized and not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "normalized": self.normalized,
            "normalization": self.normalization,
            "violations": self.violations,
            "gradient": self.gradient_mode,
        }

    def to_text(self) -> str:
        lines = [f"model valid: {'yes' if self.ok else 'no'}"]
        for r in self.normalization:
            flag = "ok" if r["residual"] <= self.tolerance else "FAIL"
            lines.append(f"  z={r['z']}: mass {r['mass']:.12g}, residual {r['residual']:.3g} [{flag}]")
        for v in self.violations:
            lines.append(f"  violation: {v}")
        lines.append(f"  gradient: {self.gradient_mode}")
        return "\n".join(lines)


def _probe_z(model: StructuralModel, rng: np.random.Generator, count: int = 5) -> list[np.ndarray]:
    zd = model.z_dist
    if model.is_discrete and zd.kind == "none":
        zp = model.discrete.z_points
        return [zp[i] for i in range(len(zp))][:count] if len(zp) <= count else [
            zp[i] for i in sorted(rng.choice(len(zp), count, replace=False))
        ]
    if zd.kind == "none":
        return [np.zeros(0)]
    if zd.kind == "table":
        if len(zd.points) <= count:
            return list(zd.points)
        p = zd.probs / zd.probs.sum() if zd.probs.sum() > 0 else None
        return [zd.points[i] for i in rng.choice(len(zd.points), count, replace=True, p=p)]
    if zd.kind == "samples":
        if len(zd.points) == 0:
            return []
        return [zd.points[i] for i in rng.choice(len(zd.points), min(count, len(zd.points)), replace=False)]
    fz = zd.density_fn()
    box = zd.domain if zd.domain.bounded else truncate_domain(fz, zd.domain, TruncationPolicy(1e-6))
    m = max(4, int(round(4096 ** (1.0 / box.ndim))))
    pts, w = tensor_nodes([nodes_1d(lo, hi, m, 1, "midpoint") for lo, hi in box.bounds])
    mass = np.maximum(np.nan_to_num(fz(pts)), 0.0) * w
    if mass.sum() <= 0:
        return [pts[len(pts) // 2]]
    return [pts[i] for i in rng.choice(len(pts), count, replace=True, p=mass / mass.sum())]


def _arg_checks(node: ex.Expr | None) -> list[tuple[str, ex.Expr]]:
    if node is None:
        return []
    out = [("ln", c.args[0]) for c in ex.calls(node, "ln")]
    out += [("sqrt", c.args[0]) for c in ex.calls(node, "sqrt")]
    return out


def validate_model(
    model: StructuralModel,
    seed: int = 0,
    spec: QuadratureSpec | None = None,
    policy: TruncationPolicy | None = None,
    samples: int = 512,
) -> ValidationReport:
    """Check normalization, domains and gradient availability; never raises."""
    rng = np.random.default_rng(seed)
    report = ValidationReport(gradient_mode=model.gradient_mode)
    probes = _probe_z(model, rng)
    if model.z_dist.kind == "table" and abs(math.fsum(model.z_dist.probs) - 1.0) > 1e-12:
        report.violations.append(f"Z table probabilities sum to {math.fsum(model.z_dist.probs)!r}")
    if model.z_dist.kind == "samples" and len(model.z_dist.points) == 0:
        report.violations.append("Z sample list is empty")

    if model.is_discrete:
        report.tolerance = 1e-12
        for z in probes:
            pmf, _ = model.discrete.tables(z)
            total = math.fsum(pmf.ravel())
            report.normalization.append({"z": np.asarray(z).tolist(), "mass": total, "residual": abs(total - 1.0)})
        return report

    spec = spec or QuadratureSpec()
    checks = _arg_checks(model.g_in) + _arg_checks(model.density.expression)
    for z in probes:
        mass = 0.0
        sample_boxes = []
        try:
            for box in model.x_domain:
                fz = lambda pts, z=z: model.f(pts, z)
                if not box.bounded:
                    box = truncate_domain(fz, box, policy, spec)
                mass += integrate_box(fz, box, spec).value
                sample_boxes.append(box)
        except (IntegrationError, ValueError) as err:
            report.violations.append(f"z={np.asarray(z).tolist()}: density integration failed ({err})")
            continue
        report.normalization.append({"z": np.asarray(z).tolist(), "mass": mass, "residual": abs(mass - 1.0)})
        for box in sample_boxes:
            pts = box.lower + rng.random((samples, box.ndim)) * (box.upper - box.lower)
            env = _env(model.x_vars, pts, model.z_vars, np.asarray(z, dtype=float))
            fv = model.f(pts, z)
            if np.any(fv < 0):
                report.violations.append(f"density negative at x={pts[np.argmax(fv < 0)].tolist()}")
            for fname, arg in checks:
                vals = _broadcast(ex.evaluate(arg, env), len(pts))
                bad = ~(vals > 0) if fname == "ln" else ~(vals >= 0)
                if bad.any():
                    report.violations.append(
                        f"{fname} argument `{ex.to_string(arg)}` not positive at x={pts[np.argmax(bad)].tolist()}"
                    )
    report.violations = list(dict.fromkeys(report.violations))
    return report
