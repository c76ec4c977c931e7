import numpy as np
import pandas as pd
import pytest
from conftest import oracle
from hypothesis import given
from hypothesis import strategies as st

from smokecast.errors import CollinearDesign, DataError, MissingAnchor
from smokecast.gap import (
    COEF_NAMES,
    GapCoefficients,
    build_gap_panel,
    female_e0_from_gap,
    fit_gap_model,
    fit_report,
    forecast_gap,
    simulate_gap_panel,
)
from smokecast.trajectories import TrajectorySet

T1 = GapCoefficients.table1()


def male(values, countries=("A",)):
    values = np.asarray(values, dtype=float)
    return TrajectorySet(list(countries), 2018 + 5 * np.arange(values.shape[-1]), values, "male", "e0")


def test_table1_constants():
    assert np.allclose(T1.beta, [-2.173, 0.012, 0.901, 0.043, -0.107, 1.18])
    assert T1.sigma == 0.496 and T1.hinge == 61 and (T1.lower, T1.upper) == (0.03, 13.35)
    assert T1.r_squared == 0.933


def test_predictor_oracle():
    assert T1.predictor(70, 5, 75, 0.05) == pytest.approx(oracle("gap_predictor"), abs=1e-12)
    terms = T1.beta * np.array([1, 70, 5, 75, T1.hinge_term(75), 0.05])
    assert np.allclose(terms, oracle("gap_terms"), atol=1e-12)


def test_hinge_override_above_81():
    assert T1.hinge_term(85) == 20.0
    assert T1.hinge_term(81) == 20.0
    assert T1.hinge_term(50) == 0.0
    assert T1.predictor(70, 5, 85, 0.05) == pytest.approx(oracle("gap_predictor_e85"), abs=1e-12)


@given(st.floats(1e-9, 1e-3))
def test_hinge_continuity(eps):
    below = T1.predictor(70, 5, 81 - eps, 0.05)
    above = T1.predictor(70, 5, 81 + eps, 0.05)
    assert abs(above - below) < abs(T1.beta[4]) * eps + abs(T1.beta[3]) * 2 * eps + 1e-12
    at61 = [T1.predictor(70, 5, 61 + d, 0.05) for d in (-eps, eps)]
    assert abs(at61[1] - at61[0]) < (abs(T1.beta[3]) + abs(T1.beta[4])) * 2 * eps + 1e-12


def test_recovery_from_synthetic_panel():
    panel = simulate_gap_panel(T1, n_countries=200, n_periods=12, rng=1)
    fit = fit_gap_model(panel)
    within = np.abs(fit.beta - T1.beta) <= 2 * fit.se
    assert within.sum() >= 5
    assert fit.lower == panel["gap"].min() and fit.upper == panel["gap"].max()
    assert list(fit_report(fit).index) == list(COEF_NAMES)


def test_degenerate_covariate():
    panel = simulate_gap_panel(T1, n_countries=20, rng=2).assign(h=0.0)
    with pytest.raises(CollinearDesign):
        fit_gap_model(panel)
    with pytest.raises(DataError):
        fit_gap_model(panel.iloc[:10])


def test_forecast_clamps_and_override():
    rng = np.random.default_rng(3)
    traj = male(rng.uniform(60, 95, (500, 1, 9)))
    gaps = forecast_gap(T1, traj, {"A": np.full(9, 0.05)}, {"A": 5.0}, {"A": 65.0}, rng=4)
    assert gaps.values.min() >= 0.03 and gaps.values.max() <= 13.35
    low = GapCoefficients(np.array([-50.0, 0, 0, 0, 0, 0]), 0.496)
    floored = forecast_gap(low, traj, {"A": np.zeros(9)}, {"A": 5.0}, {"A": 65.0}, rng=5)
    assert np.all(floored.values == 0.03)
    female = female_e0_from_gap(traj, floored)
    assert np.allclose(female.values - traj.values, 0.03)


def test_forecast_uses_lagged_gap():
    quiet = GapCoefficients(T1.beta, 1e-12)
    traj = male(np.full((1, 1, 3), 75.0))
    g = forecast_gap(quiet, traj, {"A": np.full(3, 0.05)}, {"A": 5.0}, {"A": 70.0}, rng=0).values[0, 0]
    assert g[0] == pytest.approx(4.958, abs=1e-9)
    assert g[1] == pytest.approx(T1.predictor(70, g[0], 75, 0.05), abs=1e-9)


def test_missing_anchor():
    with pytest.raises(MissingAnchor):
        forecast_gap(T1, male(np.full((2, 1, 3), 75.0)), {"A": np.zeros(3)}, {"A": 5.0}, {})


def test_female_linearity():
    rng = np.random.default_rng(6)
    m = male(rng.normal(80, 2, (1000, 2, 4)), ("A", "B"))
    g = TrajectorySet(["A", "B"], m.periods, rng.uniform(0.03, 8, (1000, 2, 4)), "female", "gap")
    f = female_e0_from_gap(m, g)
    assert np.allclose(f.values.mean(0) - m.values.mean(0), g.values.mean(0), atol=1e-12)
    assert np.all(f.values > m.values)


def test_coefficients_round_trip(tmp_path):
    T1.save(tmp_path / "c.json")
    back = GapCoefficients.load(tmp_path / "c.json")
    assert np.array_equal(back.beta, T1.beta) and back.sigma == T1.sigma


def test_build_panel():
    periods = np.arange(1953, 1974, 5)
    male_e0 = {"A": (periods, np.linspace(60, 68, 5)), "B": (periods[1:], np.linspace(60, 66, 4))}
    female_e0 = {"A": (periods, np.linspace(65, 75, 5)), "B": (periods[1:], np.linspace(64, 72, 4))}
    panel = build_gap_panel(male_e0, female_e0, {"A": (periods, np.full(5, 0.1))})
    assert isinstance(panel, pd.DataFrame) and len(panel) == 4
    assert set(panel["country"]) == {"A"}
    first = panel.iloc[0]
    assert first["gap_prev"] == pytest.approx(5.0) and first["e0_m_anchor"] == 60.0 and first["h"] == 0.1
