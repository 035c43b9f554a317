from __future__ import annotations

import math

import numpy as np
import pytest

from peace.estimation import (
    EstimationError,
    SampleTable,
    fit_conditional_density,
    fit_conditional_mean,
    identifiable_piev,
    peace_from_data,
    silverman_bandwidth,
    sweep_from_data,
)

from conftest import MODELS

# X, Z ~ N(0, 1) independent; the identifiable effect at d=0 is |alpha| times the
# width of the central 99% X range.
RANGE_99 = 2 * 2.5758293035489004
REFERENCE_D0 = 2.0 * RANGE_99


def synthetic(seed: int, n: int = 5000, alpha: float = 2.0, beta: float = 1.0, noise: float = 0.1) -> SampleTable:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    z = rng.standard_normal(n)
    y = alpha * x + beta * z + noise * rng.standard_normal(n)
    return SampleTable(x[:, None], z[:, None], y, ("x",), ("z",), "y")


def test_density_of_standard_normal_at_zero():
    x = np.random.default_rng(0).standard_normal(5000)
    dens = fit_conditional_density(SampleTable(x[:, None], np.zeros((5000, 0))))
    assert dens([[0.0]])[0] == pytest.approx(1 / math.sqrt(2 * math.pi), rel=0.10)


def test_density_of_uniform_at_midpoint():
    x = np.random.default_rng(1).uniform(0, 1, 5000)
    dens = fit_conditional_density(SampleTable(x[:, None], np.zeros((5000, 0))))
    assert dens([[0.5]])[0] == pytest.approx(1.0, rel=0.15)


def test_constant_column_is_rejected():
    with pytest.raises(EstimationError, match="variance"):
        silverman_bandwidth(np.ones(100))
    data = SampleTable(np.ones((100, 1)), np.zeros((100, 0)))
    with pytest.raises(EstimationError):
        fit_conditional_density(data)


def test_too_few_rows():
    data = synthetic(0, n=29)
    with pytest.raises(EstimationError, match="30"):
        peace_from_data(data)
    with pytest.raises(EstimationError):
        fit_conditional_density(data)


def test_missing_values_are_rejected():
    x = np.arange(40.0)
    x[3] = np.nan
    with pytest.raises(EstimationError, match="missing"):
        SampleTable(x[:, None], np.zeros((40, 0)))


def test_csv_loading(tmp_path):
    data = SampleTable.from_csv(MODELS / "synthetic.csv", ["x"], ["z"], "y")
    assert data.n == 5000
    assert data.x_names == ("x",)
    with pytest.raises(EstimationError, match="column"):
        SampleTable.from_csv(MODELS / "synthetic.csv", ["w"])
    (tmp_path / "bad.csv").write_text("x,y\n1,a\n")
    with pytest.raises(EstimationError, match="non-numeric"):
        SampleTable.from_csv(tmp_path / "bad.csv", ["x"], (), "y")


def test_conditional_density_positive_at_data_and_normalized():
    data = synthetic(2, n=2000)
    dens = fit_conditional_density(data)
    sub = slice(0, 200)
    for xv, zv in zip(data.x[sub, 0], data.z[sub, 0]):
        assert dens([[xv]], [zv])[0] > 0
    grid = np.linspace(-6, 6, 2001)
    step = grid[1] - grid[0]
    for zv in (-1.0, 0.0, 1.5):
        vals = dens(grid[:, None], [zv])
        mass = float(step * (vals.sum() - 0.5 * (vals[0] + vals[-1])))
        assert mass == pytest.approx(1.0, abs=0.02)


def test_local_linear_recovers_noiseless_coefficients():
    rng = np.random.default_rng(3)
    x, z = rng.standard_normal(5000), rng.standard_normal(5000)
    data = SampleTable(x[:, None], z[:, None], 1.5 * x - 0.7 * z + 0.2)
    mean = fit_conditional_mean(data)
    q = np.column_stack([rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20)])
    _, slope = mean.fit_at(q)
    np.testing.assert_allclose(slope[:, 0], 1.5, rtol=0.02)
    np.testing.assert_allclose(slope[:, 1], -0.7, rtol=0.02)


def test_identifiable_gradient_recovered():
    data = synthetic(4)
    r = identifiable_piev(data, [0.0], 0.0)
    assert r.details["mean_gradient"] == pytest.approx(2.0, rel=0.10)
    assert "not verified" in r.details["assumptions"]
    assert r.err_estimate >= 0


def test_no_x_effect_gives_near_zero():
    data = synthetic(5, alpha=0.0, noise=0.0)
    assert identifiable_piev(data, [0.3], 0.0).value <= 0.05


def test_constant_outcome_gives_near_zero():
    rng = np.random.default_rng(6)
    data = SampleTable(rng.standard_normal((500, 1)), rng.standard_normal((500, 1)), np.full(500, 3.0))
    assert peace_from_data(data, 0.0, z_samples=8).value <= 0.05


def test_sweep_is_positive_and_decreasing():
    data = synthetic(7, n=2000)
    res = sweep_from_data(data, [0.0, 0.5, 1.0], z_samples=16)
    values = [r.value / r.details["normalizer"] for r in res]
    assert all(v > 0 and math.isfinite(v) for v in values)
    assert values[0] > values[1] > values[2]
    assert res[2].details["normalizer"] == 4.0
    assert all(r.details["stderr"] >= 0 for r in res)


def test_large_degree_warns():
    data = synthetic(8, n=300)
    with pytest.warns(RuntimeWarning, match="degree above 1"):
        r = peace_from_data(data, 1.5, z_samples=4)
    assert "warning" in r.details


def test_negative_degree_rejected():
    with pytest.raises(ValueError):
        sweep_from_data(synthetic(9, n=100), [-1.0])


def test_peace_from_data_is_seed_deterministic():
    data = synthetic(10, n=500)
    a = peace_from_data(data, 0.0, seed=3, z_samples=8).value
    b = peace_from_data(data, 0.0, seed=3, z_samples=8).value
    assert a == b


@pytest.mark.slow
def test_doubling_samples_does_not_increase_median_error():
    def median_error(n):
        errs = [abs(identifiable_piev(synthetic(100 + s, n=n), [0.0], 0.0).value - REFERENCE_D0) for s in range(5)]
        return float(np.median(errs))

    assert median_error(4000) <= median_error(2000)
