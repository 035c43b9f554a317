"""Continuous-case effects through the gradient-integral reduction.

For a fixed z the per-z variation is

    PIEV_d^z = integral over the x-domain of |grad_x g_in(x, z)| f(x|z)^{2d} dx

and PEACE is the Z expectation of it, multiplied by the model's normalizer.
Unbounded x-domains are truncated by the mass of the weight f^{2d}
(or of f itself when d = 0, where the weight carries no mass).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import expr as ex
from .domain import DomainBox
from .model import ConditionalDensity, ModelError, StructuralModel, power_weight
from .quadrature import (
    QuadratureSpec,
    TruncationPolicy,
    expect_over_z,
    integrate_box,
    truncate_domain,
)

__all__ = [
    "PeaceResult",
    "integration_boxes",
    "piev",
    "peace",
    "peace_r",
    "signed_piev",
    "signed_peace",
    "change_of_variables",
    "affine_pullback",
]


@dataclass
class PeaceResult:
    value: float
    degree: float
    method: str
    err_estimate: float = 0.0
    domain: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "degree": self.degree,
            "method": self.method,
            "err_estimate": self.err_estimate,
            "domain": self.domain,
        }


def _zvec(z) -> np.ndarray:
    return np.asarray(z if z is not None else (), dtype=float).ravel()


def _truncation_weight(model: StructuralModel, z, d: float):
    if d == 0:
        return lambda pts: model.f(pts, z)
    return lambda pts: power_weight(model.f(pts, z), d)


def integration_boxes(
    model: StructuralModel,
    z=(),
    d: float = 1.0,
    policy: TruncationPolicy | None = None,
    spec: QuadratureSpec | None = None,
) -> tuple[DomainBox, ...]:
    """The bounded boxes piev integrates over for this z and degree."""
    if model.is_discrete:
        raise ModelError("piev needs a continuous model")
    z = _zvec(z)
    out = []
    for box in model.x_domain:
        if box.bounded:
            out.append(box)
            continue
        if d == 0:
            warnings.warn(
                "d = 0 on an unbounded domain: truncating by the mass of f, "
                "the untruncated integral may diverge",
                RuntimeWarning,
                stacklevel=3,
            )
        out.append(truncate_domain(_truncation_weight(model, z, d), box, policy, spec))
    return tuple(out)


def _integrate(model, z, d, integrand_of_grad, boxes, spec):
    spec = spec or QuadratureSpec()
    value, err = 0.0, 0.0
    parts = []
    for box in boxes:

        def f(pts, box=box):
            grad = model.grad_x(pts, z)
            return integrand_of_grad(grad) * model.weight(pts, z, d)

        res = integrate_box(f, box, spec)
        parts.append(res.value)
        value += res.value
        err += res.error
    return math.fsum(parts), err


def _check_degree(d: float) -> float:
    d = float(d)
    if not d >= 0:
        raise ValueError(f"degree must be non-negative, got {d}")
    return d


def piev(
    model: StructuralModel,
    z=(),
    d: float = 1.0,
    spec: QuadratureSpec | None = None,
    policy: TruncationPolicy | None = None,
    boxes: Sequence[DomainBox] | None = None,
) -> PeaceResult:
    """Per-z variation: integral of |grad_x g_in| f(x|z)^{2d} over the x-domain."""
    d = _check_degree(d)
    z = _zvec(z)
    if boxes is None:
        boxes = integration_boxes(model, z, d, policy, spec)
    value, err = _integrate(model, z, d, lambda g: np.sqrt(np.sum(g * g, axis=1)), boxes, spec)
    return PeaceResult(value, d, "closed-integral", err, [b.to_json() for b in boxes])


def _outer(model: StructuralModel, d: float, inner_of, spec, policy, r: float = 1.0):
    """Z expectation of a per-z quantity, reusing truncation when f ignores z."""
    shared = None
    if model.density is not None and not model.density.depends_on_z:
        shared = integration_boxes(model, np.zeros(model.nz), d, policy, spec)

    def inner(z):
        res = inner_of(z, shared)
        return res.value, res.err_estimate

    e = expect_over_z(inner, model.z_dist, spec, r=r, policy=policy)
    domain = [b.to_json() for b in shared] if shared else [b.to_json() for b in model.x_domain]
    return e, domain


def peace(
    model: StructuralModel,
    d: float = 1.0,
    spec: QuadratureSpec | None = None,
    policy: TruncationPolicy | None = None,
) -> PeaceResult:
    """PEACE of degree d: normalizer times E_Z[piev]."""
    d = _check_degree(d)
    if model.is_discrete:
        from .discrete import peace_discrete

        return peace_discrete(model, d)
    e, domain = _outer(model, d, lambda z, b: piev(model, z, d, spec, policy, b), spec, policy)
    k = model.norm_factor(d)
    method = "closed-integral" if k == 1.0 else "closed-integral[4^d]"
    return PeaceResult(k * e.value, d, method, k * e.error, domain, {"normalizer": k, "z_nodes": e.nodes})


def peace_r(
    model: StructuralModel,
    d: float,
    r: float,
    spec: QuadratureSpec | None = None,
    policy: TruncationPolicy | None = None,
) -> PeaceResult:
    """Integral of piev against f_Z^r (a P(z)^r-weighted sum for tables); no normalizer."""
    d = _check_degree(d)
    if model.is_discrete:
        from .discrete import discrete_piev

        inner = lambda z, b: discrete_piev(model, z, d)
    else:
        inner = lambda z, b: piev(model, z, d, spec, policy, b)
    if r != 1.0 and model.z_dist.kind == "samples":
        raise ValueError("sample-based Z distributions only support r = 1")
    e, domain = _outer(model, d, inner, spec, policy, r=r)
    return PeaceResult(e.value, d, f"closed-integral[r={r:g}]", e.error, domain)


def _one_dimensional(model: StructuralModel):
    if model.nx != 1:
        raise ModelError("signed effects are defined only for one-dimensional X")


def signed_piev(
    model: StructuralModel,
    z=(),
    d: float = 1.0,
    sign: str = "+",
    spec: QuadratureSpec | None = None,
    policy: TruncationPolicy | None = None,
    boxes: Sequence[DomainBox] | None = None,
) -> PeaceResult:
    """Integral of the positive (``+``) or negative (``-``) part of dg/dx times f^{2d}."""
    _one_dimensional(model)
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    d = _check_degree(d)
    z = _zvec(z)
    if boxes is None:
        boxes = integration_boxes(model, z, d, policy, spec)
    s = 1.0 if sign == "+" else -1.0
    value, err = _integrate(model, z, d, lambda g: np.maximum(s * g[:, 0], 0.0), boxes, spec)
    return PeaceResult(value, d, f"signed{sign}", err, [b.to_json() for b in boxes])


def signed_peace(
    model: StructuralModel,
    d: float = 1.0,
    sign: str = "+",
    spec: QuadratureSpec | None = None,
    policy: TruncationPolicy | None = None,
) -> PeaceResult:
    _one_dimensional(model)
    d = _check_degree(d)
    e, domain = _outer(model, d, lambda z, b: signed_piev(model, z, d, sign, spec, policy, b), spec, policy)
    k = model.norm_factor(d)
    return PeaceResult(k * e.value, d, f"signed{sign}", k * e.error, domain, {"normalizer": k})


def _check_matrix(A, n: int) -> tuple[np.ndarray, float]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape != (n, n):
        raise ValueError(f"A must be {n}x{n}, got {A.shape}")
    det = float(np.linalg.det(A))
    if abs(det) <= 1e-12:
        raise ValueError("A is singular (|det A| <= 1e-12)")
    return A, det


def is_orthogonal(A, tol: float = 1e-10) -> bool:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return float(np.max(np.abs(A @ A.T - np.eye(len(A))))) <= tol


def change_of_variables(
    model: StructuralModel,
    A,
    a,
    d: float,
    z=(),
    spec: QuadratureSpec | None = None,
    policy: TruncationPolicy | None = None,
) -> PeaceResult:
    """piev of W where X = A W + a, evaluated as an integral over the X-domain.

    With g_W(w) = g(Aw + a) and f_W(w) = |det A| f(Aw + a) the substitution
    x = Aw + a gives  integral |A^T grad g(x)| (|det A| f(x|z))^{2d} dx / |det A|.
    For orthogonal A this is exactly piev of the original model.
    """
    d = _check_degree(d)
    A, det = _check_matrix(A, model.nx)
    a = np.asarray(a, dtype=float).ravel()
    if a.shape != (model.nx,):
        raise ValueError("offset a must have one entry per X variable")
    z = _zvec(z)
    boxes = integration_boxes(model, z, d, policy, spec)
    if is_orthogonal(A):
        res = piev(model, z, d, spec, policy, boxes)
        res.method = "change-of-variables[isometry]"
        return res
    scale = abs(det) ** (2.0 * d) / abs(det) if d else 1.0 / abs(det)

    def norm(g):
        return np.sqrt(np.sum((g @ A) ** 2, axis=1))

    value, err = _integrate(model, z, d, norm, boxes, spec)
    return PeaceResult(scale * value, d, "change-of-variables", scale * err, [b.to_json() for b in boxes])


def affine_pullback(model: StructuralModel, A, a, names: Sequence[str] | None = None) -> StructuralModel:
    """The model of W where X = A W + a, built by substituting into g_in and f.

    The new density is |det A| f(Aw + a | z).  The x-domain must be all of
    R^n, or A must map boxes to boxes (one non-zero entry per row).
    """
    if model.is_discrete or model.g_in is None or model.density.expression is None:
        raise ModelError("affine pullback needs a continuous model given by expressions")
    A, det = _check_matrix(A, model.nx)
    a = np.asarray(a, dtype=float).ravel()
    names = tuple(names) if names else tuple(f"{v}_w" for v in model.x_vars)
    if set(names) & (set(model.z_vars) | set(model.x_vars)) and names != model.x_vars:
        raise ModelError("pullback variable names clash with existing variables")
    wv = [ex.Var(n) for n in names]
    mapping = {}
    for i, v in enumerate(model.x_vars):
        term: ex.Expr = ex.Const(float(a[i]))
        for j in range(model.nx):
            if A[i, j] != 0.0:
                term = ex.BinOp("+", term, ex.BinOp("*", ex.Const(float(A[i, j])), wv[j]))
        mapping[v] = term
    g_new = ex.simplify(ex.substitute(model.g_in, mapping))
    f_new = ex.BinOp("*", ex.Const(abs(det)), ex.substitute(model.density.expression, mapping))

    boxes = []
    for box in model.x_domain:
        if all(math.isinf(lo) and math.isinf(hi) for lo, hi in box.bounds):
            boxes.append(box)
            continue
        if np.any(np.count_nonzero(A, axis=1) != 1):
            raise ModelError("A must map the x-domain boxes onto boxes")
        inv = np.linalg.inv(A)
        lo = inv @ (box.lower - a)
        hi = inv @ (box.upper - a)
        with np.errstate(invalid="ignore"):
            boxes.append(DomainBox(tuple(zip(np.minimum(lo, hi), np.maximum(lo, hi)))))
    density = ConditionalDensity(names, model.z_vars, f_new)
    return replace(model, x_vars=names, g_in=g_new, density=density, x_domain=tuple(boxes), name=model.name + "[pullback]")
