"""Executable property suites over generated models.

Each suite draws its models from a seeded generator, checks one invariant
and reports the first counterexample on failure.  Reports contain no
timings, so a fixed seed gives byte-identical output.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .continuous import affine_pullback, piev, signed_piev
from .discrete import (
    flux_tv,
    grid_refine_peace,
    peace_discrete,
    phi_oracle_discrete,
    signed_discrete_piev,
)
from .domain import DomainBox
from .model import DiscreteGrid, StructuralModel, ZDistribution, model_from_dict
from .oracle import variational_oracle
from .quadrature import QuadratureSpec, tensor_nodes, nodes_1d

__all__ = ["SuiteResult", "SUITES", "run_suites", "format_report"]

SLACK = 1e-9


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: int = 0
    counterexample: dict | None = None

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def check(self, ok: bool, **info) -> None:
        self.cases += 1
        if not ok:
            self.failures += 1
            if self.counterexample is None:
                self.counterexample = info

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "cases": self.cases, "failures": self.failures, "counterexample": self.counterexample}


# ---------------------------------------------------------------- generators


def _r(x: float) -> str:
    return repr(round(float(x), 6))


def random_box(rng, n: int) -> DomainBox:
    lo = rng.uniform(-1.0, 0.0, n)
    hi = lo + rng.uniform(0.5, 1.5, n)
    return DomainBox(tuple(zip(lo, hi)))


def smooth_2d(rng, box: DomainBox | None = None) -> StructuralModel:
    """g with gradient bounded away from zero on [-1, 1]^2 and a Gaussian bump weight."""
    a, b = rng.uniform(1.0, 2.0), rng.uniform(-0.5, 0.5)
    c, e = rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)
    m1, m2, s = rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(0.3, 1.0)
    box = box or random_box(rng, 2)
    return model_from_dict(
        {
            "x_vars": ["x", "y"],
            "g_in": f"{_r(a)}*x + {_r(b)}*y + {_r(c)}*sin(x*y) + {_r(e)}*x^2",
            "density": f"exp(-((x - {_r(m1)})^2 + (y - {_r(m2)})^2) / {_r(s)})",
            "domain": [{"x": list(box.bounds[0]), "y": list(box.bounds[1])}],
        }
    )


def smooth_1d(rng, monotone: bool = False) -> StructuralModel:
    a = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
    if monotone:
        g = f"{_r(a)}*x + {_r(0.3 * abs(a) * np.sign(a))}*x^3"
    else:
        b, c, q = rng.uniform(-1, 1), rng.uniform(1, 4), rng.uniform(-1, 1)
        g = f"{_r(a)}*x + {_r(b)}*sin({_r(c)}*x) + {_r(q)}*x^2"
    lo = rng.uniform(-2.0, -0.5)
    hi = rng.uniform(0.5, 2.0)
    mu, s = rng.uniform(-0.5, 0.5), rng.uniform(0.5, 2.0)
    return model_from_dict({"x_vars": ["x"], "g_in": g, "density": f"exp(-(x - {_r(mu)})^2 / {_r(s)})", "domain": {"x": [lo, hi]}})


def gaussian_2d(rng) -> StructuralModel:
    """Smooth g with non-vanishing gradient under a Gaussian weight on the whole plane."""
    a, b, c = rng.uniform(1.0, 1.5), rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5)
    s1, s2 = rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0)
    return model_from_dict(
        {
            "x_vars": ["x", "y"],
            "g_in": f"{_r(a)}*x + {_r(b)}*y + {_r(c)}*sin(x + y)",
            "density": f"exp(-x^2/(2*{_r(s1)}^2) - y^2/(2*{_r(s2)}^2)) / (2*{_r(math.pi)}*{_r(s1)}*{_r(s2)})",
            "domain": {"x": ["-inf", "inf"], "y": ["-inf", "inf"]},
        }
    )


def random_grid(rng, shape, z_count: int = 1) -> DiscreteGrid:
    supports = [np.cumsum(rng.uniform(0.2, 1.5, n)) for n in shape]
    pmf = rng.random((z_count,) + tuple(shape))
    pmf /= pmf.sum(axis=tuple(range(1, pmf.ndim)), keepdims=True)
    g = rng.normal(size=(z_count,) + tuple(shape))
    zp = np.arange(z_count, dtype=float).reshape(-1, 1) if z_count > 1 else np.zeros((1, 0))
    return DiscreteGrid(tuple(supports), pmf, g, zp)


def discrete_model(grid: DiscreteGrid) -> StructuralModel:
    names = tuple(f"x{i + 1}" for i in range(grid.ndim))
    if len(grid.z_points) > 1:
        k = len(grid.z_points)
        zd = ZDistribution.table(("z",), grid.z_points, np.full(k, 1.0 / k))
        return StructuralModel(names, ("z",), None, (), None, grid, zd, "auto")
    return StructuralModel(names, (), None, (), None, grid, ZDistribution(), "auto")


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


# ---------------------------------------------------------------- continuous suites


def suite_additivity(rng, count: int) -> SuiteResult:
    res = SuiteResult("additivity")
    for k in range(count):
        model = smooth_2d(rng)
        box = model.x_domain[0]
        axis = int(rng.integers(2))
        lo, hi = box.bounds[axis]
        cut = lo + rng.uniform(0.2, 0.8) * (hi - lo)
        b1 = list(box.bounds)
        b2 = list(box.bounds)
        b1[axis] = (lo, cut)
        b2[axis] = (cut, hi)
        p1 = piev(model.with_domain([DomainBox(tuple(b1))])).value
        p2 = piev(model.with_domain([DomainBox(tuple(b2))])).value
        union = piev(model.with_domain([DomainBox(tuple(b1)), DomainBox(tuple(b2))])).value
        whole = piev(model).value
        res.check(_close(union, p1 + p2, SLACK) and _close(whole, p1 + p2, SLACK), case=k, g=str(model.name or "smooth_2d"), pieces=[p1, p2], union=union, whole=whole)
    return res


def suite_monotonicity(rng, count: int) -> SuiteResult:
    res = SuiteResult("monotonicity")
    for k in range(count):
        model = smooth_2d(rng)
        box = model.x_domain[0]
        sub = []
        for lo, hi in box.bounds:
            a, b = np.sort(rng.uniform(lo, hi, 2))
            sub.append((a, b if b > a else a + 1e-3 * (hi - lo)))
        inner = piev(model.with_domain([DomainBox(tuple(sub))])).value
        whole = piev(model).value
        res.check(inner <= whole + SLACK, case=k, sub_box=sub, inner=inner, whole=whole)
    return res


def suite_subadditivity(rng, count: int) -> SuiteResult:
    res = SuiteResult("subadditivity")
    for k in range(count):
        model = smooth_2d(rng)
        box = model.x_domain[0]
        pieces = [list(box.bounds)]
        for axis in range(2):
            if rng.random() < 0.5 and axis == 1 and len(pieces) > 1:
                continue
            lo, hi = box.bounds[axis]
            cut = lo + rng.uniform(0.3, 0.7) * (hi - lo)
            delta = rng.uniform(0.01, 0.2) * (hi - lo)
            nxt = []
            for p in pieces:
                left, right = list(p), list(p)
                left[axis] = (lo, min(hi, cut + delta))
                right[axis] = (max(lo, cut - delta), hi)
                nxt += [left, right]
            pieces = nxt
        total = math.fsum(piev(model.with_domain([DomainBox(tuple(p))])).value for p in pieces)
        whole = piev(model).value
        res.check(whole <= total + SLACK, case=k, cover=pieces, whole=whole, total=total)
    return res


def _gradient_vanishes(model: StructuralModel, spec: QuadratureSpec) -> bool:
    for box in model.x_domain:
        pts, _ = tensor_nodes([nodes_1d(lo, hi, spec.points, spec.panels) for lo, hi in box.bounds])
        grad = model.grad_x(pts, ())
        positive = model.f(pts, ()) > 0
        if np.any(np.linalg.norm(grad, axis=1)[positive] > 1e-9):
            return False
    return True


def suite_zero_effect(rng, count: int) -> SuiteResult:
    res = SuiteResult("zero-effect")
    spec = QuadratureSpec()
    for k in range(count):
        box = random_box(rng, 2)
        kind = k % 3
        if kind == 0:
            g = f"{_r(rng.normal())}"
        elif kind == 1:
            g = f"{_r(rng.normal())} + 0*x*y"
        else:
            g = f"{_r(rng.uniform(0.1, 1))}*x*y + {_r(rng.normal())}"
        model = model_from_dict(
            {"x_vars": ["x", "y"], "g_in": g, "density": "1", "domain": {"x": list(box.bounds[0]), "y": list(box.bounds[1])}}
        )
        value = piev(model, (), float(rng.uniform(0, 1)), spec).value
        flat = _gradient_vanishes(model, spec)
        res.check((value == 0.0) == flat, case=k, g=g, value=value, gradient_vanishes=flat)
    return res


def _discrete_signed_reference(grid: DiscreteGrid, d: float, sign: str) -> float:
    """4^d sum (g_{i+1} - g_i)^+- P_i^d P_{i+1}^d straight from the tables."""
    pmf, g = grid.tables(())
    step = np.diff(g) if sign == "+" else -np.diff(g)
    w = (pmf[1:] * pmf[:-1]) ** d if d else np.ones(len(step))
    return 4.0**d * math.fsum(np.maximum(step, 0.0) * w)


def suite_signed(rng, count: int) -> SuiteResult:
    res = SuiteResult("signed-decomposition")
    for k in range(count):
        model = smooth_1d(rng)
        d = float(rng.uniform(0, 1.5))
        total = piev(model, (), d).value
        plus = signed_piev(model, (), d, "+").value
        minus = signed_piev(model, (), d, "-").value
        res.check(_close(total, plus + minus, SLACK), case=k, kind="continuous", d=d, piev=total, plus=plus, minus=minus)
    square = model_from_dict({"x_vars": ["x"], "g_in": "x^2", "density": "0.5", "domain": {"x": [-1, 1]}})
    plus = signed_piev(square, (), 0.0, "+").value
    minus = signed_piev(square, (), 0.0, "-").value
    res.check(_close(plus, 1.0, SLACK) and _close(minus, 1.0, SLACK), kind="x^2 halves", plus=plus, minus=minus)
    for k in range(count):
        n = int(rng.integers(3, 12))
        grid = random_grid(rng, (n,))
        d = float(rng.choice([0.0, 0.5, 1.0, 1.7]))
        plus = signed_discrete_piev(grid, (), d, "+")
        minus = signed_discrete_piev(grid, (), d, "-")
        ref_plus = _discrete_signed_reference(grid, d, "+")
        ref_minus = _discrete_signed_reference(grid, d, "-")
        whole = peace_discrete(discrete_model(grid), d).value
        ok = _close(plus, ref_plus, 1e-12) and _close(minus, ref_minus, 1e-12) and _close(whole, plus + minus, 1e-12)
        res.check(ok, case=k, kind="discrete", d=d, plus=plus, reference_plus=ref_plus, minus=minus, reference_minus=ref_minus)
    return res


def suite_oracle_bound(rng, count: int, knots: int = 9, budget: int = 30) -> SuiteResult:
    res = SuiteResult("oracle-bound")
    for k in range(count):
        model = smooth_1d(rng) if k % 2 == 0 else smooth_2d(rng)
        d = float(rng.uniform(0, 1))
        closed = piev(model, (), d).value
        oracle = variational_oracle(model, (), d, budget, knots, seed=k).value
        res.check(oracle <= closed + SLACK, case=k, nx=model.nx, d=d, oracle=oracle, closed=closed)
    return res


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def suite_isometry(rng, count: int) -> SuiteResult:
    res = SuiteResult("isometry")
    for k in range(count):
        model = gaussian_2d(rng)
        d = float(rng.uniform(0.25, 1.0))
        A = rotation(float(rng.uniform(0, 2 * math.pi)))
        if rng.random() < 0.5:
            A = A @ np.diag([1.0, -1.0])
        a = rng.normal(size=2) * 0.3
        before = piev(model, (), d).value
        after = piev(affine_pullback(model, A, a), (), d).value
        res.check(_close(after, before, 1e-6), case=k, d=d, A=A.tolist(), a=a.tolist(), before=before, after=after)
    return res


def suite_degree_monotone(rng, count: int) -> SuiteResult:
    res = SuiteResult("degree-monotonicity")
    for k in range(count):
        model = smooth_1d(rng) if k % 2 else smooth_2d(rng)
        degrees = np.sort(rng.uniform(0, 2, 4))
        values = [piev(model, (), float(d)).value for d in degrees]
        ok = all(b <= a + SLACK for a, b in zip(values, values[1:]))
        res.check(ok, case=k, degrees=degrees.tolist(), values=values)
    return res


# ---------------------------------------------------------------- discrete suites


def _npiev_1d(grid: DiscreteGrid, d: float) -> float:
    pmf, g = grid.tables(())
    w = (pmf[1:] * pmf[:-1]) ** d if d else np.ones(len(g) - 1)
    return 4.0**d * math.fsum(np.abs(np.diff(g)) * w)


def suite_one_dim(rng, count: int) -> SuiteResult:
    res = SuiteResult("discrete-1d-reduction")
    for k in range(count):
        grid = random_grid(rng, (int(rng.integers(2, 20)),))
        d = float(rng.uniform(0, 2))
        value = peace_discrete(discrete_model(grid), d).value
        ref = _npiev_1d(grid, d)
        res.check(abs(value - ref) <= 1e-15 * max(1.0, ref) * len(grid.supports[0]), case=k, d=d, value=value, reference=ref)
    return res


def suite_cauchy_schwarz(rng, count: int, samples: int = 200) -> SuiteResult:
    res = SuiteResult("cauchy-schwarz")
    for k in range(count):
        n = int(rng.integers(1, 4))
        shape = tuple(int(rng.integers(2, 6)) for _ in range(n))
        grid = random_grid(rng, shape, z_count=int(rng.integers(1, 3)))
        model = discrete_model(grid)
        d = float(rng.uniform(0, 1.5))
        out = phi_oracle_discrete(model, d, budget=samples, seed=k)
        closed = peace_discrete(model, d).value
        ok = _close(out.aligned, closed, 1e-12) and out.best_random <= closed + 1e-12 and out.value <= closed + 1e-12
        res.check(ok, case=k, shape=list(shape), d=d, aligned=out.aligned, best_random=out.best_random, closed=closed)
    return res


def suite_tv_at_zero(rng, count: int) -> SuiteResult:
    res = SuiteResult("flux-tv-at-degree-zero")
    for k in range(count):
        n = int(rng.integers(1, 4))
        shape = tuple(int(rng.integers(2, 7)) for _ in range(n))
        grid = random_grid(rng, shape)
        value = peace_discrete(discrete_model(grid), 0.0).value
        tv = flux_tv(grid)
        res.check(_close(value, tv, 1e-12), case=k, shape=list(shape), peace=value, flux_tv=tv)
    return res


def suite_refinement(rng, count: int) -> SuiteResult:
    res = SuiteResult("refinement-convergence")
    cases = [
        (model_from_dict({"x_vars": ["x"], "g_in": "x", "density": "2*x", "domain": {"x": [0, 1]}}), 4.0 / 3.0, [64, 128, 256, 512, 1024]),
        (
            model_from_dict({"x_vars": ["x", "y"], "g_in": "x + 2*y", "density": "x + y", "domain": {"x": [0, 1], "y": [0, 1]}}),
            math.sqrt(5.0) * 7.0 / 6.0,
            [32, 64, 128, 256],
        ),
    ]
    for k in range(count):
        a = float(rng.uniform(0.5, 2.0))
        m = model_from_dict({"x_vars": ["x"], "g_in": f"{_r(a)}*x^2", "density": "3*x^2", "domain": {"x": [0, 1]}})
        cases.append((m, float(_r(a)) * 2.0 * 9.0 / 6.0, [64, 128, 256, 512, 1024]))
    for k, (model, exact, sizes) in enumerate(cases):
        seq = grid_refine_peace(model, [[s] * model.nx for s in sizes], d=1.0)
        errors = [abs(v - exact) / exact for _, v in seq]
        ok = all(b <= a for a, b in zip(errors, errors[1:])) and errors[-1] <= 0.01
        res.check(ok, case=k, exact=exact, resolutions=sizes, errors=errors)
    return res


def suite_permutation(rng, count: int) -> SuiteResult:
    res = SuiteResult("permutation-invariance")
    for k in range(count):
        n = int(rng.integers(2, 4))
        shape = tuple(int(rng.integers(2, 6)) for _ in range(n))
        grid = random_grid(rng, shape)
        d = float(rng.uniform(0, 1.5))
        order = [int(i) for i in rng.permutation(n)]
        base = peace_discrete(discrete_model(grid), d).value
        perm = peace_discrete(discrete_model(grid.transpose(order)), d).value
        res.check(_close(base, perm, 1e-12), case=k, shape=list(shape), order=order, base=base, permuted=perm)
    return res


SUITES: dict[str, Callable] = {
    "additivity": suite_additivity,
    "monotonicity": suite_monotonicity,
    "subadditivity": suite_subadditivity,
    "zero-effect": suite_zero_effect,
    "signed-decomposition": suite_signed,
    "oracle-bound": suite_oracle_bound,
    "isometry": suite_isometry,
    "degree-monotonicity": suite_degree_monotone,
    "discrete-1d-reduction": suite_one_dim,
    "cauchy-schwarz": suite_cauchy_schwarz,
    "flux-tv-at-degree-zero": suite_tv_at_zero,
    "refinement-convergence": suite_refinement,
    "permutation-invariance": suite_permutation,
}


def run_suites(seed: int = 42, count: int = 10, names=None) -> list[SuiteResult]:
    """Run the named suites (all by default), each from its own derived seed."""
    names = list(SUITES) if names is None else list(names)
    out = []
    for i, name in enumerate(SUITES):
        if name not in names:
            continue
        rng = np.random.default_rng([seed, i])
        out.append(SUITES[name](rng, count))
    return out


def format_report(results: list[SuiteResult]) -> str:
    lines = []
    for r in results:
        if r.passed:
            lines.append(f"PASS {r.name} ({r.cases} cases)")
        else:
            lines.append(f"FAIL {r.name} ({r.failures}/{r.cases} cases failed)")
            lines.append("  counterexample: " + json.dumps(r.counterexample, sort_keys=True, default=float))
    ok = all(r.passed for r in results)
    lines.append("all properties PASS" if ok else "some properties FAIL")
    return "\n".join(lines)
