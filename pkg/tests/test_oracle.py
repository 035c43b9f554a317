from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peace import DomainBox, ModelError, load_model, model_from_dict
from peace.continuous import piev
from peace.examples import gaussian, uniform_model
from peace.oracle import WeightFunction, hermite_basis, variational_oracle

from conftest import MODELS


def unit_model(g, density="1", lo=0.0, hi=1.0):
    return model_from_dict({"x_vars": ["x"], "g_in": g, "density": density, "domain": {"x": [lo, hi]}})


def test_hermite_basis_vanishes_at_ends_and_matches_derivative():
    knots = np.linspace(0.0, 1.0, 5)
    ends = hermite_basis(knots, np.array([0.0, 1.0]))
    assert np.all(ends == 0.0)
    x = np.linspace(0.01, 0.99, 37)
    x = x[np.min(np.abs(x[:, None] - knots[None, :]), axis=1) > 1e-3]  # second derivative jumps at knots
    h = 1e-6
    fd = (hermite_basis(knots, x + h) - hermite_basis(knots, x - h)) / (2 * h)
    np.testing.assert_allclose(hermite_basis(knots, x, derivative=True), fd, atol=1e-6)


def test_hermite_value_functions_partition_interior_knots():
    knots = np.linspace(-1.0, 2.0, 7)
    vals = hermite_basis(knots, knots)
    np.testing.assert_allclose(vals[:5, 1:-1], np.eye(5), atol=1e-15)


def test_weight_function_needs_bounded_box_and_three_knots():
    with pytest.raises(ValueError):
        WeightFunction.zeros(DomainBox(((0.0, 1.0),)), 2)
    with pytest.raises(ValueError):
        WeightFunction.zeros(DomainBox.from_bounds([["-inf", 1.0]]), 5)


def test_divergence_integrates_to_zero():
    wf = WeightFunction.zeros(DomainBox(((0.0, 1.0), (0.0, 2.0))), 5)
    rng = np.random.default_rng(0)
    wf.coefficients[...] = rng.normal(size=wf.coefficients.shape)
    # composite Gauss nodes are exact on the piecewise polynomial divergence
    t, w = np.polynomial.legendre.leggauss(4)
    xs = (np.arange(4)[:, None] + (t[None, :] + 1) / 2).ravel() / 4
    ws = np.tile(w / 8, 4)
    ys, wy = 2 * xs, 2 * ws
    pts = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    total = float(np.sum(wf.divergence(pts) * np.outer(ws, wy).ravel()))
    assert abs(total) <= 1e-10


def test_linear_uniform_approaches_one_from_below():
    # phi must vanish at both ends, so half a knot cell of boundary mass is lost
    model = unit_model("x")
    for k in (5, 9, 17, 33):
        value = variational_oracle(model, d=1.0, knots=k, budget=50).value
        assert 1.0 - 1.0 / (2 * (k - 1)) - 1e-9 <= value <= 1.0 + 1e-9


def test_constant_g_gives_zero():
    assert variational_oracle(unit_model("4"), d=0.5, budget=5).value == pytest.approx(0.0, abs=1e-12)


def test_monotone_smooth_model_within_two_percent():
    model = unit_model("x^3 + x", gaussian("x", 0.7), "-inf", "inf")
    exact = piev(model, (), 1.0).value
    found = variational_oracle(model, d=1.0, knots=33, budget=500).value
    assert found <= exact + 1e-9
    assert found >= 0.98 * exact


def test_oracle_is_bounded_in_two_dimensions():
    model = model_from_dict(
        {"x_vars": ["x", "y"], "g_in": "x + 2*y + 0.3*sin(x*y)", "density": "0.5", "domain": {"x": [0, 1], "y": [0, 2]}}
    )
    exact = piev(model, (), 0.5).value
    found = variational_oracle(model, d=0.5, knots=7, budget=20)
    assert found.value <= exact + 1e-9
    assert found.value >= 0.8 * exact
    wf = found.details["weights"][0]
    assert wf.max_violation() <= 1e-12


def test_feasibility_on_the_check_grid():
    model = load_model(MODELS / "ramp.json")
    out = variational_oracle(model, d=1.0, knots=9, budget=30)
    for wf in out.details["weights"]:
        mag = np.linalg.norm(wf.on_check_grid(), axis=-1)
        assert np.all(mag <= wf.clip_bound + 1e-12)


def test_oracle_errors():
    with pytest.raises(ValueError):
        variational_oracle(unit_model("x"), budget=0)
    with pytest.raises(ModelError):
        variational_oracle(uniform_model((3,), (1.0,)), d=1.0)
    four = model_from_dict(
        {
            "x_vars": ["a", "b", "c", "e"],
            "g_in": "a+b+c+e",
            "density": "1",
            "domain": {"a": [0, 1], "b": [0, 1], "c": [0, 1], "e": [0, 1]},
        }
    )
    with pytest.raises(ModelError):
        variational_oracle(four, d=1.0)


def test_seed_makes_the_search_reproducible():
    model = unit_model("x^3 + x", "1", -1.0, 1.0)
    a = variational_oracle(model, d=0.5, budget=10, seed=7).value
    b = variational_oracle(model, d=0.5, budget=10, seed=7).value
    assert a == b


@given(
    st.floats(0.2, 3.0),
    st.floats(-2.0, 2.0),
    st.sampled_from([0.0, 0.5, 1.0, 1.5]),
)
@settings(max_examples=20, deadline=None)
def test_oracle_never_exceeds_closed_form(a, b, d):
    model = unit_model(f"{a!r}*x + {b!r}*x^2", "2*x")
    exact = piev(model, (), d).value
    assert variational_oracle(model, d=d, knots=9, budget=20).value <= exact + 1e-9
