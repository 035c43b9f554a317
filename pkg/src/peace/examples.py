"""Built-in closed-form examples with embedded model descriptions.

Each example builds its models from dictionaries in this module, computes
the effect numerically and compares it with the analytic value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .continuous import peace, peace_r
from .discrete import grid_refine_peace, peace_discrete
from .model import DiscreteGrid, StructuralModel, ZDistribution, model_from_dict

__all__ = [
    "ExampleRow",
    "ExampleReport",
    "EXAMPLES",
    "run_example",
    "newton_closed_form",
    "joint_closed_form",
    "uniform_closed_form",
    "newton_model",
    "joint_model",
    "uniform_model",
    "linear_model",
]

PI = math.pi
GAUSS = "exp(-({v} - {mu})^2 / (2*{s}^2)) / ({s} * sqrt(2*{pi}))"


def gaussian(var: str, sigma: float, mu: float = 0.0) -> str:
    return GAUSS.format(v=var, mu=repr(float(mu)), s=repr(float(sigma)), pi=repr(PI))


@dataclass
class ExampleRow:
    label: str
    expected: float
    computed: float
    tolerance: float

    @property
    def error(self) -> float:
        scale = abs(self.expected) if self.expected != 0 else 1.0
        return abs(self.computed - self.expected) / scale

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


@dataclass
class ExampleReport:
    name: str
    rows: list[ExampleRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_text(self) -> str:
        lines = [f"example {self.name}"]
        for r in self.rows:
            verdict = "PASS" if r.passed else "FAIL"
            lines.append(
                f"  {r.label}: expected {r.expected:.10g} computed {r.computed:.10g} "
                f"rel.err {r.error:.3e} (tol {r.tolerance:g}) {verdict}"
            )
        lines += [f"  {n}" for n in self.notes]
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "rows": [
                {"label": r.label, "expected": r.expected, "computed": r.computed, "rel_error": r.error, "tolerance": r.tolerance, "passed": r.passed}
                for r in self.rows
            ],
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------- closed forms


def newton_closed_form(d: float, m: float = 1.0, sigma: float = 0.1) -> float:
    """Effect of force on acceleration when F ~ N(mu, sigma^2) given F0."""
    return 1.0 / (m * math.sqrt(d) * 2.0**d * PI ** (d - 0.5) * sigma ** (2 * d - 1))


def joint_closed_form(d: float, m: float = 1.0, sigma: float = 0.1, sigma0: float = 0.05) -> float:
    """Effect of the pair (F, F0) on acceleration for independent Gaussians."""
    return 1.0 / (m * 2.0 ** (2 * d - 0.5) * d * PI ** (2 * d - 1) * (sigma * sigma0) ** (2 * d - 1))


def uniform_closed_form(sizes, alpha, d: float) -> float:
    """Uniform PMF on unit-spaced supports with a linear g of coefficients alpha."""
    sizes = [int(n) for n in sizes]
    prod_minus = math.prod(n - 1 for n in sizes)
    return 4.0**d * prod_minus * float(np.linalg.norm(alpha)) / math.prod(sizes) ** (2 * d)


def gaussian_power_integral(sigma: float, d: float) -> float:
    """Integral over the line of N(0, sigma^2) density to the power 2d (d > 0)."""
    return (2 * PI * sigma**2) ** (0.5 - d) / math.sqrt(2 * d)


# ---------------------------------------------------------------- models


def newton_model(m: float = 1.0, sigma: float = 0.1, mu: float = 0.0) -> StructuralModel:
    """A = (F - F0)/m with F | F0 Gaussian around mu, F0 a point mass at 0."""
    return model_from_dict(
        {
            "name": "newton",
            "x_vars": ["F"],
            "z_vars": ["F0"],
            "params": {"m": m},
            "g_in": "(F - F0)/m",
            "density": gaussian("F", sigma, mu),
            "domain": {"F": ["-inf", "inf"]},
            "z_dist": {"table": {"points": [[0.0]], "probs": [1.0]}},
            "normalizer": "none",
        }
    )


def joint_model(m: float = 1.0, sigma: float = 0.1, sigma0: float = 0.05) -> StructuralModel:
    """A = (F - F0)/m with independent centred Gaussians F and F0, both causes."""
    return model_from_dict(
        {
            "name": "joint",
            "x_vars": ["F", "F0"],
            "params": {"m": m},
            "g_in": "(F - F0)/m",
            "density": f"({gaussian('F', sigma)}) * ({gaussian('F0', sigma0)})",
            "domain": {"F": ["-inf", "inf"], "F0": ["-inf", "inf"]},
        }
    )


def uniform_model(sizes, alpha) -> StructuralModel:
    """Uniform PMF on {1, ..., n_i} per axis and g = sum alpha_i x_i."""
    sizes = [int(n) for n in sizes]
    alpha = np.asarray(alpha, dtype=float)
    supports = [np.arange(1, n + 1, dtype=float) for n in sizes]
    pmf = np.full(tuple(sizes), 1.0 / math.prod(sizes))
    grid = DiscreteGrid.from_function(supports, lambda *xs: sum(a * x for a, x in zip(alpha, xs)), pmf)
    names = tuple(f"x{i + 1}" for i in range(len(sizes)))
    return StructuralModel(names, (), None, (), None, grid, ZDistribution(), "auto", name="uniform")


def linear_model(alpha, sigmas, cause=None) -> StructuralModel:
    """Y = sum alpha_i X_i with independent centred Gaussian X_i.

    With ``cause=i`` only X_i is the cause and the others form Z with their
    joint Gaussian density.
    """
    n = len(alpha)
    names = [f"x{i + 1}" for i in range(n)]
    g = " + ".join(f"{float(a)!r}*{v}" for a, v in zip(alpha, names))
    if cause is None:
        dens = " * ".join(f"({gaussian(v, s)})" for v, s in zip(names, sigmas))
        return model_from_dict(
            {"name": "linear", "x_vars": names, "g_in": g, "density": dens, "domain": {v: ["-inf", "inf"] for v in names}, "normalizer": "none"}
        )
    others = [v for i, v in enumerate(names) if i != cause]
    zdens = " * ".join(f"({gaussian(v, s)})" for i, (v, s) in enumerate(zip(names, sigmas)) if i != cause)
    return model_from_dict(
        {
            "name": f"linear[{names[cause]}]",
            "x_vars": [names[cause]],
            "z_vars": others,
            "g_in": g,
            "density": gaussian(names[cause], sigmas[cause]),
            "domain": {v: ["-inf", "inf"] for v in names},
            "z_dist": {"density": zdens},
            "normalizer": "none",
        }
    )


def dis_con_model() -> StructuralModel:
    return model_from_dict({"name": "dis-con", "x_vars": ["x"], "g_in": "x", "density": "2*x", "domain": {"x": [0, 1]}})


# ---------------------------------------------------------------- examples


def example_uniform() -> ExampleReport:
    rep = ExampleReport("uniform")
    cases = [((2,), (1.0,), 0.0), ((5,), (-2.0,), 0.5), ((3, 4), (1.0, 2.0), 1.0), ((2, 3, 2), (0.5, -1.0, 1.5), 0.25)]
    for sizes, alpha, d in cases:
        value = peace_discrete(uniform_model(sizes, alpha), d).value
        rep.rows.append(ExampleRow(f"n={list(sizes)} alpha={list(alpha)} d={d:g}", uniform_closed_form(sizes, alpha, d), value, 1e-12))
    return rep


def example_newton() -> ExampleReport:
    rep = ExampleReport("newton")
    model = newton_model()
    for d in (0.25, 0.5, 1.0):
        rep.rows.append(ExampleRow(f"m=1 sigma=0.1 d={d:g}", newton_closed_form(d), peace(model, d).value, 1e-4))
    return rep


def example_joint() -> ExampleReport:
    rep = ExampleReport("joint")
    rep.rows.append(ExampleRow("m=1 sigma=0.1 sigma0=0.05 d=1", joint_closed_form(1.0), peace(joint_model(), 1.0).value, 1e-3))
    return rep


def example_linear_product(alpha=(1.5, -0.5), sigmas=(0.4, 0.7), d: float = 0.5) -> ExampleReport:
    """Joint effect equals |alpha| times the product of per-cause effects over prod |alpha_i|.

    Also checks the bounds between the joint generalized effect of degree d
    with Z-power r = 2d and the per-cause ones.
    """
    rep = ExampleReport("linear-product")
    joint = peace(linear_model(alpha, sigmas), d).value
    singles = []
    for i, (a, s) in enumerate(zip(alpha, sigmas)):
        one = model_from_dict(
            {"x_vars": ["x"], "params": {"a": a}, "g_in": "a*x", "density": gaussian("x", s), "domain": {"x": ["-inf", "inf"]}}
        )
        singles.append(peace(one, d).value)
    product = float(np.linalg.norm(alpha)) * math.prod(singles) / math.prod(abs(a) for a in alpha)
    rep.rows.append(ExampleRow(f"alpha={list(alpha)} sigma={list(sigmas)} d={d:g}", product, joint, 1e-6))

    per_cause = [peace_r(linear_model(alpha, sigmas, cause=i), d, 2 * d).value for i in range(len(alpha))]
    total = math.fsum(per_cause)
    lower = total / math.sqrt(len(alpha))
    ok = lower - 1e-9 <= joint <= total + 1e-9
    rep.notes.append(
        f"bounds with r=2d: {lower:.10g} <= {joint:.10g} <= {total:.10g} {'PASS' if ok else 'FAIL'}"
    )
    rep.rows.append(ExampleRow("lower bound holds", 1.0, float(joint >= lower - 1e-9), 0.0))
    rep.rows.append(ExampleRow("upper bound holds", 1.0, float(joint <= total + 1e-9), 0.0))
    return rep


def example_dis_con(resolutions=(8, 32, 128, 512, 1024)) -> ExampleReport:
    rep = ExampleReport("dis-con")
    exact = 4.0 / 3.0
    seq = grid_refine_peace(dis_con_model(), resolutions, d=1.0)
    for cells, value in seq:
        rep.notes.append(f"cells={cells[0]:5d} value={value:.10f} rel.err={abs(value - exact) / exact:.3e}")
    rep.rows.append(ExampleRow(f"g=x f=2x d=1 at {seq[-1][0][0]} cells", exact, seq[-1][1], 0.01))
    return rep


EXAMPLES = {
    "uniform": example_uniform,
    "newton": example_newton,
    "joint": example_joint,
    "linear-product": example_linear_product,
    "dis-con": example_dis_con,
}


def run_example(name: str) -> ExampleReport:
    try:
        fn = EXAMPLES[name]
    except KeyError:
        raise KeyError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}") from None
    return fn()
