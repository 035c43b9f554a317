from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from peace import DomainBox, ModelError, load_model, model_from_dict
from peace.continuous import (
    affine_pullback,
    change_of_variables,
    integration_boxes,
    peace,
    peace_r,
    piev,
    signed_peace,
    signed_piev,
)
from peace.examples import gaussian, joint_closed_form, joint_model, linear_model, newton_closed_form, newton_model
from peace.properties import rotation

MODELS = Path(__file__).resolve().parents[1] / "models"


def unit(g, density="1", lo=0.0, hi=1.0):
    return model_from_dict({"x_vars": ["x"], "g_in": g, "density": density, "domain": {"x": [lo, hi]}})


def test_ramp_density_degree_one():
    res = piev(unit("x", "2*x"), (), 1.0)
    assert res.value == pytest.approx(4 / 3, rel=1e-12)
    assert res.method == "closed-integral"
    assert res.domain == [[[0.0, 1.0]]]


@pytest.mark.parametrize("d", [0.0, 0.3, 1.0, 2.5])
def test_constant_g_has_no_effect(d):
    assert piev(unit("7", "2*x"), (), d).value == 0.0
    assert peace(load_model(MODELS / "constant.json"), d).value == 0.0


@pytest.mark.parametrize("d", [0.1, 0.25, 0.5, 1.0])
def test_newton_closed_form(d):
    res = peace(newton_model(), d)
    assert res.value == pytest.approx(newton_closed_form(d), rel=1e-8)


def test_newton_reference_number():
    assert newton_closed_form(1.0) == pytest.approx(2.82095, abs=1e-5)
    assert peace(newton_model(), 1.0).value == pytest.approx(2.82095, abs=1e-5)


def test_joint_closed_form():
    assert joint_closed_form(1.0) == pytest.approx(22.508, abs=1e-3)
    assert peace(joint_model(), 1.0).value == pytest.approx(joint_closed_form(1.0), rel=1e-6)


def test_piev_against_adaptive_quadrature_smooth_gradient():
    model = unit("sin(x) + 2*x", "exp(-(x-0.2)^2)", -1.0, 2.0)
    f = lambda x: abs(math.cos(x) + 2) * math.exp(-((x - 0.2) ** 2)) ** 1.4
    ref, _ = integrate.quad(f, -1.0, 2.0, epsabs=0.0, epsrel=1e-13)
    assert piev(model, (), 0.7).value == pytest.approx(ref, rel=1e-12)


def test_piev_with_gradient_kinks_within_composite_accuracy():
    model = unit("sin(3*x) + x^2", "exp(-(x-0.2)^2)", -1.0, 2.0)
    dg = lambda x: 3 * math.cos(3 * x) + 2 * x
    f = lambda x: abs(dg(x)) * math.exp(-((x - 0.2) ** 2)) ** 1.4
    grid = np.linspace(-1.0, 2.0, 3001)
    vals = np.array([dg(x) for x in grid])
    kinks = grid[:-1][np.sign(vals[:-1]) != np.sign(vals[1:])]
    ref, _ = integrate.quad(f, -1.0, 2.0, points=list(kinks), limit=200, epsabs=1e-13, epsrel=1e-13)
    res = piev(model, (), 0.7)
    assert res.value == pytest.approx(ref, rel=1e-3)


def test_conditional_model_applies_four_to_the_d():
    model = load_model(MODELS / "conditional.json")
    res = peace(model, 1.0)
    # x | z ~ N(z, 1): piev = 2 / (2 sqrt(pi)) for every z
    assert res.value == pytest.approx(4.0 / math.sqrt(math.pi), rel=1e-8)
    assert res.method == "closed-integral[4^d]"
    assert res.details["normalizer"] == 4.0


def test_peace_r_at_one_matches_expectation_without_normalizer():
    model = load_model(MODELS / "conditional.json")
    assert peace_r(model, 1.0, 1.0).value == pytest.approx(peace(model, 1.0).value / 4.0, rel=1e-12)


def test_peace_r_zero_is_plain_integral_over_bounded_z():
    model = model_from_dict(
        {
            "x_vars": ["x"],
            "z_vars": ["z"],
            "g_in": "x*z",
            "density": "1",
            "domain": {"x": [0, 1], "z": [0, 2]},
            "z_dist": {"density": "0.5"},
        }
    )
    # piev(z) = |z|, integral over [0, 2] is 2
    assert peace_r(model, 0.5, 0.0).value == pytest.approx(2.0, rel=1e-12)


def test_peace_r_rejects_samples_for_other_powers():
    model = model_from_dict(
        {"x_vars": ["x"], "z_vars": ["z"], "g_in": "x*z", "density": "1", "domain": {"x": [0, 1]}, "z_dist": {"samples": [[1.0], [2.0]]}}
    )
    assert peace_r(model, 1.0, 1.0).value == pytest.approx(1.5)
    with pytest.raises(ValueError):
        peace_r(model, 1.0, 2.0)


@pytest.mark.parametrize("d", [0.25, 0.5, 1.0])
def test_linear_bounds_with_power_two_d(d):
    alpha, sigmas = (1.2, -0.7), (0.5, 0.8)
    joint = peace(linear_model(alpha, sigmas), d).value
    singles = [peace_r(linear_model(alpha, sigmas, cause=i), d, 2 * d).value for i in range(2)]
    assert sum(singles) / math.sqrt(2) <= joint + 1e-9
    assert joint <= sum(singles) + 1e-9


def test_signed_parts_of_square():
    model = unit("x^2", "0.5", -1.0, 1.0)
    assert signed_piev(model, (), 0.0, "+").value == pytest.approx(1.0, rel=1e-12)
    assert signed_piev(model, (), 0.0, "-").value == pytest.approx(1.0, rel=1e-12)
    plus, minus = signed_peace(model, 1.0, "+"), signed_peace(model, 1.0, "-")
    assert plus.value == pytest.approx(minus.value, rel=1e-12)
    assert plus.method == "signed+"


def test_increasing_g_has_no_negative_part():
    model = unit("exp(x) + x", "2*x")
    assert signed_piev(model, (), 1.0, "-").value == 0.0
    assert signed_peace(unit("3*x"), 0.5, "-").value == 0.0


def test_signed_rejects_multivariate_x():
    with pytest.raises(ModelError):
        signed_piev(joint_model(), (), 1.0, "+")


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.5, 5), st.floats(0.0, 1.5))
@settings(max_examples=40, deadline=None)
def test_signed_decomposition_sums(a, b, c, d):
    model = unit(f"{a!r}*x + {b!r}*sin({c!r}*x)", "exp(-x^2)", -1.5, 2.0)
    total = piev(model, (), d).value
    parts = signed_piev(model, (), d, "+").value + signed_piev(model, (), d, "-").value
    assert parts == pytest.approx(total, rel=1e-9, abs=1e-12)


def test_union_domain_sums_boxes():
    whole = unit("x^3", "1", 0.0, 1.0)
    split = model_from_dict({"x_vars": ["x"], "g_in": "x^3", "density": "1", "domain": [{"x": [0, 0.4]}, {"x": [0.4, 1]}]})
    assert piev(split, (), 0.5).value == pytest.approx(piev(whole, (), 0.5).value, rel=1e-12)


def test_zero_degree_on_unbounded_domain_warns():
    model = model_from_dict({"x_vars": ["x"], "g_in": "x", "density": gaussian("x", 1.0), "domain": {"x": ["-inf", "inf"]}})
    with pytest.warns(RuntimeWarning, match="d = 0"):
        piev(model, (), 0.0)


def test_truncation_follows_weight_power():
    model = newton_model()
    narrow = integration_boxes(model, [0.0], 2.0)[0].bounds[0]
    wide = integration_boxes(model, [0.0], 0.1)[0].bounds[0]
    assert narrow[1] < wide[1]


def test_negative_degree_rejected():
    with pytest.raises(ValueError):
        piev(unit("x"), (), -0.5)


# ----------------------------------------------------------- change of variables


def gaussian_plane():
    return model_from_dict(
        {
            "x_vars": ["x", "y"],
            "g_in": "x + 0.5*y + 0.3*sin(x - y)",
            "density": f"({gaussian('x', 0.6)}) * ({gaussian('y', 0.9)})",
            "domain": {"x": ["-inf", "inf"], "y": ["-inf", "inf"]},
        }
    )


def test_identity_change_of_variables_is_piev():
    model = gaussian_plane()
    assert change_of_variables(model, np.eye(2), [0, 0], 1.0).value == piev(model, (), 1.0).value


def test_rotation_by_thirty_degrees_keeps_piev():
    model = gaussian_plane()
    before = piev(model, (), 1.0).value
    rotated = affine_pullback(model, rotation(math.pi / 6), [0.0, 0.0])
    assert piev(rotated, (), 1.0).value == pytest.approx(before, rel=1e-6)


def test_stretch_change_of_variables_two_routes():
    model = model_from_dict({"x_vars": ["x1", "x2"], "g_in": "x1", "density": "1", "domain": {"x1": [0, 1], "x2": [0, 1]}})
    A = np.diag([2.0, 1.0])
    formula = change_of_variables(model, A, [0.0, 0.0], 0.0).value
    pulled = piev(affine_pullback(model, A, [0.0, 0.0]), (), 0.0).value
    assert formula == pytest.approx(1.0, rel=1e-12)
    assert pulled == pytest.approx(1.0, rel=1e-12)


@given(
    st.floats(-2, 2).filter(lambda v: abs(v) > 0.2),
    st.floats(-2, 2).filter(lambda v: abs(v) > 0.2),
    st.floats(-1, 1),
    st.floats(0.25, 1.0),
)
@settings(max_examples=15, deadline=None)
def test_general_affine_formula_matches_pullback(s1, s2, off, d):
    model = gaussian_plane()
    A = np.array([[s1, 0.0], [0.0, s2]]) @ rotation(0.4)
    a = np.array([off, -off])
    formula = change_of_variables(model, A, a, d).value
    pulled = piev(affine_pullback(model, A, a), (), d).value
    assert formula == pytest.approx(pulled, rel=1e-6)


def test_singular_matrix_rejected():
    with pytest.raises(ValueError, match="singular"):
        change_of_variables(gaussian_plane(), [[1, 2], [2, 4]], [0, 0], 1.0)


# ----------------------------------------------------------- degree monotonicity


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
@settings(max_examples=20, deadline=None)
def test_degree_monotone_when_density_at_most_one(d1, d2):
    model = unit("x^2 + sin(x)", "0.5", -1.0, 1.0)
    lo, hi = sorted([d1, d2])
    assert piev(model, (), hi).value <= piev(model, (), lo).value + 1e-12
