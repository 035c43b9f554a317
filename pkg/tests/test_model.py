from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from peace import DomainBox, ModelError, load_model, model_from_dict, parse_expression, validate_model
from peace.model import DiscreteGrid, ZDistribution, power_weight

MODELS = Path(__file__).resolve().parents[1] / "models"


def uniform_unit(g="x", density="1"):
    return model_from_dict({"x_vars": ["x"], "g_in": g, "density": density, "domain": {"x": [0, 1]}})


def test_domain_box_rejects_empty_interval():
    with pytest.raises(ValueError):
        DomainBox(((1.0, 1.0),))
    box = DomainBox.from_bounds([["-inf", 2]])
    assert not box.bounded
    assert box.to_json() == [["-inf", 2.0]]


def test_domain_box_geometry():
    a = DomainBox(((0, 2), (0, 1)))
    b = DomainBox(((1, 3), (0.5, 2)))
    assert a.volume == 2.0
    assert a.intersect(b) == DomainBox(((1, 2), (0.5, 1)))
    assert a.overlaps(b)
    assert not a.overlaps(DomainBox(((2, 3), (0, 1))))


def test_power_weight_zero_power_is_one_even_at_zero_density():
    np.testing.assert_array_equal(power_weight(np.array([0.0, 0.5, 2.0]), 0.0), [1.0, 1.0, 1.0])
    np.testing.assert_allclose(power_weight(np.array([0.0, 0.5]), 1.0), [0.0, 0.25])


def test_validation_uniform_is_normalized_with_symbolic_gradient():
    report = validate_model(uniform_unit())
    assert report.ok
    assert report.gradient_mode == "symbolic"


def test_validation_flags_unit_residual_for_density_two():
    report = validate_model(uniform_unit(density="2"))
    assert not report.normalized
    assert report.normalization[0]["residual"] == pytest.approx(1.0, abs=1e-12)


def test_abs_switches_to_finite_differences():
    model = uniform_unit(g="abs(x - 0.5)")
    assert validate_model(model).gradient_mode == "finite-difference"
    grad = model.grad_x(np.array([[0.2], [0.8]]))
    np.testing.assert_allclose(grad[:, 0], [-1.0, 1.0], atol=1e-8)


def test_validation_flags_negative_density_and_bad_log():
    report = validate_model(uniform_unit(g="ln(x - 0.5)", density="2*x - 0.5"))
    text = " ".join(report.violations)
    assert "negative" in text
    assert "ln" in text


def test_validation_is_deterministic_for_a_seed():
    model = load_model(MODELS / "conditional.json")
    a = validate_model(model, seed=3).to_dict()
    b = validate_model(model, seed=3).to_dict()
    assert a == b
    assert a["ok"]


def test_conditional_density_normalizes_for_probed_z():
    report = validate_model(load_model(MODELS / "conditional.json"))
    assert len(report.normalization) == 5
    assert all(r["residual"] <= 1e-6 for r in report.normalization)


def test_unknown_variable_in_g_is_rejected():
    with pytest.raises(ModelError, match="w"):
        model_from_dict({"x_vars": ["x"], "g_in": "x + w", "density": "1", "domain": {"x": [0, 1]}})


def test_overlapping_x_and_z_vars_rejected():
    with pytest.raises(ModelError):
        model_from_dict(
            {"x_vars": ["x"], "z_vars": ["x"], "g_in": "x", "density": "1", "domain": {"x": [0, 1]}, "z_dist": "1"}
        )


def test_overlapping_domain_boxes_rejected():
    with pytest.raises(ModelError, match="disjoint"):
        model_from_dict({"x_vars": ["x"], "g_in": "x", "density": "1", "domain": [{"x": [0, 1]}, {"x": [0.5, 2]}]})


def test_union_domain_loads_two_boxes():
    m = model_from_dict({"x_vars": ["x"], "g_in": "x", "density": "1", "domain": [{"x": [0, 0.5]}, {"x": [0.5, 1]}]})
    assert len(m.x_domain) == 2


def test_estimated_density_points_to_data_path():
    with pytest.raises(ModelError, match="from-data"):
        model_from_dict({"x_vars": ["x"], "g_in": "x", "density": "estimated"})


def test_params_are_substituted():
    m = model_from_dict({"x_vars": ["x"], "params": {"a": 3.0}, "g_in": "a*x", "density": "1", "domain": {"x": [0, 1]}})
    assert m.g(np.array([[2.0]]))[0] == 6.0


def test_normalizer_follows_conditioning():
    assert load_model(MODELS / "conditional.json").norm_factor(1.0) == 4.0
    assert load_model(MODELS / "ramp.json").norm_factor(1.0) == 1.0
    assert load_model(MODELS / "newton.json").norm_factor(1.0) == 1.0


def test_discrete_grid_invariants():
    with pytest.raises(ModelError):
        DiscreteGrid(([0.0, 0.0, 1.0],), np.full((1, 3), 1 / 3), np.zeros((1, 3)), np.zeros((1, 0)))
    with pytest.raises(ModelError):
        DiscreteGrid(([0.0, 1.0],), np.array([[1.5, -0.5]]), np.zeros((1, 2)), np.zeros((1, 0)))


def test_discrete_csv_loads_full_product(tmp_path):
    m = load_model(MODELS / "grid_table.json")
    assert m.is_discrete
    assert m.discrete.shape == (2, 2)
    pmf, g = m.discrete.tables([1.0])
    assert pmf.sum() == pytest.approx(1.0)
    assert g[1, 1] == 3.0


def test_discrete_csv_missing_row_rejected(tmp_path):
    rows = "x,pmf,g\n0,0.5,0\n1,0.5,1\n"
    (tmp_path / "t.csv").write_text(rows)
    (tmp_path / "m.json").write_text(json.dumps({"x_vars": ["x"], "discrete": {"csv": "t.csv"}}))
    assert load_model(tmp_path / "m.json").discrete.shape == (2,)
    (tmp_path / "t2.csv").write_text("x,y,pmf,g\n0,0,0.5,0\n1,1,0.5,1\n")
    (tmp_path / "m2.json").write_text(json.dumps({"x_vars": ["x", "y"], "discrete": {"csv": "t2.csv"}}))
    with pytest.raises(ModelError, match="Cartesian"):
        load_model(tmp_path / "m2.json")


def test_discrete_pmf_validation_exact():
    m = model_from_dict({"x_vars": ["x"], "g_in": "x", "density": "0.3", "discrete": {"supports": {"x": [0, 1, 2]}}})
    report = validate_model(m)
    assert not report.normalized
    assert report.normalization[0]["residual"] == pytest.approx(0.1)


def test_z_table_must_sum_to_one():
    m = model_from_dict(
        {
            "x_vars": ["x"],
            "z_vars": ["z"],
            "g_in": "x + z",
            "density": "1",
            "domain": {"x": [0, 1]},
            "z_dist": {"table": {"points": [[0], [1]], "probs": [0.5, 0.4]}},
        }
    )
    assert any("sum" in v for v in validate_model(m).violations)


def test_z_samples_from_csv(tmp_path):
    (tmp_path / "z.csv").write_text("z\n0.1\n0.2\n0.3\n")
    spec = {"x_vars": ["x"], "z_vars": ["z"], "g_in": "x*z", "density": "1", "domain": {"x": [0, 1]}, "z_dist": {"samples": "z.csv"}}
    (tmp_path / "m.json").write_text(json.dumps(spec))
    m = load_model(tmp_path / "m.json")
    assert m.z_dist.kind == "samples"
    np.testing.assert_allclose(m.z_dist.points[:, 0], [0.1, 0.2, 0.3])


def test_invalid_json_is_model_error(tmp_path):
    (tmp_path / "m.json").write_text("{not json")
    with pytest.raises(ModelError):
        load_model(tmp_path / "m.json")


def test_z_distribution_kinds():
    t = ZDistribution.table(("z",), [[0.0], [1.0]], [0.25, 0.75])
    assert t.kind == "table"
    d = ZDistribution.density(("z",), parse_expression("exp(-z^2/2)", ["z"]), DomainBox.from_bounds([["-inf", "inf"]]))
    assert d.density_fn()(np.array([[0.0]]))[0] == pytest.approx(1.0)
    assert math.isinf(d.domain.bounds[0][1])
