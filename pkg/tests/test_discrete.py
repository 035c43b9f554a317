from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peace import DiscreteGrid, ModelError, load_model, model_from_dict
from peace.discrete import (
    CubeLike,
    FaceLike,
    dif,
    discrete_piev,
    discrete_terms,
    flux_tv,
    grid_refine_peace,
    inject_dif_sign_fault,
    omega,
    peace_discrete,
    peace_phi,
    phi_oracle_discrete,
    signed_discrete_piev,
    tv_ani,
    tv_classic,
)
from peace.examples import uniform_closed_form, uniform_model

from conftest import MODELS


def grid_of(supports, g, pmf=None):
    shape = tuple(len(s) for s in supports)
    if pmf is None:
        pmf = np.full(shape, 1.0 / math.prod(shape))
    return DiscreteGrid.from_function(supports, g, pmf)


UNIT2 = ([0.0, 1.0], [0.0, 1.0])


def sum_xy(x, y):
    return x + y


def test_dif_of_sum_on_unit_square():
    grid = grid_of(UNIT2, sum_xy)
    assert dif(grid, (1, 1), 0) == 1.0
    assert dif(grid, CubeLike(grid.supports, (1, 1)), 1) == 1.0


def test_dif_of_constant_is_zero():
    grid = grid_of(UNIT2, lambda x, y: 0 * x + 7.0)
    assert dif(grid, (1, 1), 0) == 0.0
    assert dif(grid, (1, 1), 1) == 0.0


def test_dif_single_pair():
    grid = DiscreteGrid(([0.0, 1.0],), np.array([0.5, 0.5]), np.array([3.0, 5.0]))
    assert dif(grid, (1,), 0) == 2.0


def test_cube_like_index_range_checked():
    with pytest.raises(ValueError):
        CubeLike((np.array([0.0, 1.0]),), (0,))
    with pytest.raises(ValueError):
        CubeLike((np.array([0.0, 1.0]),), (1, 1))


def test_face_like_geometry():
    supports = (np.array([0.0, 2.0, 3.0]), np.array([0.0, 0.5]))
    cube = CubeLike(supports, (1, 1))
    np.testing.assert_array_equal(cube.edges(), [2.0, 0.5])
    assert len(cube.corners()) == 4
    face = cube.face(0)
    assert isinstance(face, FaceLike)
    assert face.fixed_value == 2.0
    assert face.volume == 0.5
    assert np.all(face.corners()[:, 0] == 2.0)
    assert cube.face(1, upper=False).fixed_value == 0.0


def test_flux_tv_of_sequence():
    grid = DiscreteGrid(([0.0, 1.0, 2.0],), np.full(3, 1 / 3), np.array([0.0, 1.0, 0.0]))
    assert flux_tv(grid) == 2.0


def test_flux_tv_of_sum_on_unit_square():
    assert flux_tv(grid_of(UNIT2, sum_xy)) == pytest.approx(math.sqrt(2.0), abs=1e-15)


def test_flux_tv_of_constant_is_zero():
    grid = grid_of(([0.0, 0.3, 1.0], [0.0, 2.0, 4.0, 5.0]), lambda x, y: 0 * x + 2.0)
    assert flux_tv(grid) == 0.0


def test_image_tv_baselines():
    supports = ([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    assert tv_ani(grid_of(supports, sum_xy)) == 8.0
    assert tv_classic(grid_of(supports, sum_xy)) == pytest.approx(4 * math.sqrt(2.0))
    constant = grid_of(supports, lambda x, y: 0 * x + 1.0)
    assert tv_ani(constant) == 0.0
    assert tv_classic(constant) == 0.0
    ramp = grid_of(supports, lambda x, y: x + 0 * y)
    assert tv_classic(ramp) == tv_ani(ramp) == 4.0


def test_image_tv_rejects_other_dimensions():
    grid = DiscreteGrid(([0.0, 1.0, 2.0],), np.full(3, 1 / 3), np.array([0.0, 1.0, 0.0]))
    with pytest.raises(ModelError):
        tv_ani(grid)
    with pytest.raises(ModelError):
        tv_classic(grid)


@pytest.mark.parametrize("d", [0.0, 0.25, 0.5, 1.0, 2.0])
def test_omega_uniform_unit_square(d):
    grid = grid_of(UNIT2, sum_xy)
    assert omega(grid, (1, 1), d) == pytest.approx(0.25**d, rel=1e-14)


def test_omega_degree_zero_is_one_even_with_zero_mass():
    pmf = np.array([[0.0, 0.5], [0.5, 0.0]])
    assert omega(grid_of(UNIT2, sum_xy, pmf), (1, 1), 0.0) == 1.0


def test_omega_one_dimensional_halves():
    grid = DiscreteGrid(([0.0, 1.0],), np.array([0.5, 0.5]), np.array([0.0, 1.0]))
    assert omega(grid, (1,), 1.0) == pytest.approx(1.0)


@pytest.mark.parametrize("d", [0.0, 0.5, 1.0, 1.5])
def test_peace_discrete_sum_on_unit_square(d):
    model = uniform_model((2, 2), (1.0, 1.0))
    assert peace_discrete(model, d).value == pytest.approx(math.sqrt(2.0) * 0.25**d, rel=1e-14)


def test_peace_discrete_uniform_formula():
    for sizes, alpha, d in [((4,), (2.0,), 1.0), ((3, 5), (1.0, -1.0), 0.5), ((2, 2, 3), (0.1, 0.2, 0.3), 2.0)]:
        value = peace_discrete(uniform_model(sizes, alpha), d).value
        assert value == pytest.approx(uniform_closed_form(sizes, alpha, d), rel=1e-12)


def test_peace_discrete_constant_is_zero():
    for d in (0.0, 0.5, 1.0):
        assert peace_discrete(uniform_model((3, 4), (0.0, 0.0)), d).value == 0.0


def test_peace_discrete_rejects_continuous_and_negative_degree():
    with pytest.raises(ModelError):
        peace_discrete(load_model(MODELS / "ramp.json"), 1.0)
    with pytest.raises(ValueError):
        peace_discrete(uniform_model((3,), (1.0,)), -0.5)


def test_conditional_table_model_from_files():
    model = load_model(MODELS / "grid_table.json")
    assert peace_discrete(model, 1.0).value == pytest.approx(0.45629, abs=1e-5)


def test_degree_zero_matches_flux_tv():
    model = uniform_model((3, 4), (1.0, 2.0))
    assert peace_discrete(model, 0.0).value == pytest.approx(flux_tv(model), rel=1e-14)


def test_terms_consistency():
    grid = grid_of(([0.0, 1.0, 3.0], [0.0, 0.5, 1.0]), lambda x, y: x * y + x)
    terms = discrete_terms(grid, (), 1.0)
    per_axis = np.stack(terms.pflux_axis, axis=-1)
    np.testing.assert_allclose(terms.pflux, np.linalg.norm(per_axis, axis=-1), rtol=1e-14)
    assert np.all(terms.pflux >= 0)
    assert terms.omega.shape == (2, 2)


def test_degenerate_axis_contributes_no_cubes():
    pmf = np.full((3, 1), 1 / 3)
    flat = grid_of(([0.0, 1.0, 2.0], [5.0]), lambda x, y: x + y, pmf)
    line = DiscreteGrid(([0.0, 1.0, 2.0],), np.full(3, 1 / 3), np.array([0.0, 1.0, 2.0]) + 5.0)
    assert discrete_piev(flat, (), 1.0).value == pytest.approx(discrete_piev(line, (), 1.0).value, rel=1e-14)


def test_signed_parts_split_the_one_dimensional_sum():
    grid = DiscreteGrid(([0.0, 1.0, 2.0, 3.0],), np.array([0.1, 0.4, 0.3, 0.2]), np.array([0.0, 2.0, 1.0, 4.0]))
    plus = signed_discrete_piev(grid, (), 1.0, "+")
    minus = signed_discrete_piev(grid, (), 1.0, "-")
    assert plus + minus == pytest.approx(discrete_piev(grid, (), 1.0).value, rel=1e-14)
    assert minus == pytest.approx(4 * 1.0 * 0.4 * 0.3, rel=1e-14)
    with pytest.raises(ValueError):
        signed_discrete_piev(grid, (), 1.0, "x")
    with pytest.raises(ModelError):
        signed_discrete_piev(grid_of(UNIT2, sum_xy))


def test_phi_oracle_aligned_reproduces_closed_form():
    model = uniform_model((4, 3), (1.0, -2.0))
    out = phi_oracle_discrete(model, 0.5, budget=200, seed=1)
    closed = peace_discrete(model, 0.5).value
    assert out.aligned == pytest.approx(closed, rel=1e-12)
    assert out.closed_form == pytest.approx(closed, rel=1e-12)
    assert out.best_random <= closed + 1e-12
    assert out.value == pytest.approx(closed, rel=1e-12)


def test_phi_oracle_zero_weights_give_zero():
    pmf = np.array([[0.5, 0.0], [0.0, 0.5]])
    grid = grid_of(UNIT2, sum_xy, pmf)
    out = phi_oracle_discrete(grid, 1.0, budget=10)
    assert out.value == 0.0


def test_phi_oracle_budget_must_be_positive():
    with pytest.raises(ValueError):
        phi_oracle_discrete(uniform_model((3,), (1.0,)), 1.0, budget=0)


def test_peace_phi_bounded_by_closed_form():
    grid = grid_of(([0.0, 1.0, 2.0], [0.0, 1.0]), lambda x, y: x * x - y)
    terms = discrete_terms(grid, (), 1.0)
    rng = np.random.default_rng(5)
    closed = float(np.sum(terms.pflux))
    for _ in range(100):
        v = rng.standard_normal(terms.omega.shape + (2,))
        v *= (terms.omega / np.linalg.norm(v, axis=-1))[..., None]
        assert peace_phi(grid, v) <= closed + 1e-12


def test_grid_refine_sum_is_exact_at_every_resolution():
    model = model_from_dict({"x_vars": ["x", "y"], "g_in": "x + y", "density": "1", "domain": {"x": [0, 1], "y": [0, 1]}})
    for d in (0.0, 1.0, 2.5):
        for cells, value in grid_refine_peace(model, [2, 3, 16], d=d):
            assert value == pytest.approx(math.sqrt(2.0), rel=1e-14), cells


def test_grid_refine_constant_is_zero():
    model = model_from_dict({"x_vars": ["x"], "g_in": "3", "density": "1", "domain": {"x": [0, 1]}})
    assert all(v == 0.0 for _, v in grid_refine_peace(model, [2, 10, 100]))


def test_grid_refine_converges_to_continuous_value():
    model = load_model(MODELS / "ramp.json")
    seq = grid_refine_peace(model, [16, 64, 256, 1024], d=1.0)
    errors = [abs(v - 4 / 3) for _, v in seq]
    assert all(b <= a for a, b in zip(errors, errors[1:]))
    assert errors[-1] / (4 / 3) <= 0.005


def test_grid_refine_rejects_small_resolution_and_discrete_models():
    with pytest.raises(ValueError):
        grid_refine_peace(load_model(MODELS / "ramp.json"), [1])
    with pytest.raises(ModelError):
        grid_refine_peace(uniform_model((3,), (1.0,)), [4])


def test_fault_hook_flips_dif_and_restores():
    grid = DiscreteGrid(([0.0, 1.0],), np.array([0.5, 0.5]), np.array([3.0, 5.0]))
    with inject_dif_sign_fault():
        assert dif(grid, (1,), 0) == -2.0
    assert dif(grid, (1,), 0) == 2.0


# ------------------------------------------------------------ random grids

tables = st.integers(2, 6).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n),
        st.lists(st.floats(-10, 10), min_size=n, max_size=n),
        st.floats(0.0, 3.0),
    )
)


@given(tables)
@settings(max_examples=200, deadline=None)
def test_one_dimensional_reduction(case):
    weights, g, d = case
    pmf = np.array(weights) / sum(weights)
    g = np.array(g)
    grid = DiscreteGrid((np.arange(len(g), dtype=float),), pmf, g)
    direct = 4.0**d * math.fsum(abs(g[i] - g[i - 1]) * pmf[i] ** d * pmf[i - 1] ** d for i in range(1, len(g)))
    assert discrete_piev(grid, (), d).value == pytest.approx(direct, rel=1e-13, abs=1e-15)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 2.0))
@settings(max_examples=50, deadline=None)
def test_axis_permutation_invariance(seed, d):
    rng = np.random.default_rng(seed)
    shape = tuple(int(n) for n in rng.integers(2, 5, 3))
    supports = tuple(np.cumsum(rng.uniform(0.1, 1.0, n)) for n in shape)
    pmf = rng.uniform(0.1, 1.0, shape)
    pmf /= pmf.sum()
    grid = DiscreteGrid(supports, pmf, rng.normal(size=shape))
    base = discrete_piev(grid, (), d).value
    for order in [(1, 0, 2), (2, 1, 0), (1, 2, 0)]:
        assert discrete_piev(grid.transpose(order), (), d).value == pytest.approx(base, rel=1e-12)
