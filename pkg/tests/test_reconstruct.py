import numpy as np
import pytest
from conftest import oracle
from hypothesis import given, settings
from hypothesis import strategies as st

from smokecast.data import DEFAULT_GRID, grid_from_lowers
from smokecast.errors import BracketFailure, RankDeficient, ShapeMismatch
from smokecast.lifetable import e0_from_rates
from smokecast.reconstruct import (
    LeeCarterParams,
    fit_lee_carter_panel,
    lee_carter_fit,
    lee_carter_rwd_forecast,
    rates_for_target_e0,
    reconstruct_male_e0,
)
from smokecast.simulate import base_schedule
from smokecast.trajectories import TrajectorySet

N = len(DEFAULT_GRID)


def schedule(k=np.zeros(1)):
    ax, bx = base_schedule()
    return LeeCarterParams(ax, bx, np.asarray(k, dtype=float))


def rank_one(seed=0, T=13):
    rng = np.random.default_rng(seed)
    ax, _ = base_schedule()
    bx = rng.uniform(0.2, 1.0, N)
    bx /= bx.sum()
    kt = np.cumsum(rng.normal(-1.5, 0.5, T))
    kt -= kt.mean()
    return ax, bx, kt, np.exp(ax + np.outer(kt, bx))


def test_rank_one_recovery():
    ax, bx, kt, m = rank_one()
    fit = lee_carter_fit(m, periods=np.arange(1953, 2014, 5))
    assert np.allclose(fit.ax, ax, atol=1e-12)
    assert np.allclose(fit.bx, bx, atol=1e-12)
    assert np.allclose(fit.kt, kt, atol=1e-10)
    assert abs(fit.bx.sum() - 1) < 1e-12 and abs(fit.kt.sum()) < 1e-10
    assert fit.rmse < 1e-12


def test_constant_rates_rank_deficient():
    m = np.tile(np.exp(base_schedule()[0]), (8, 1))
    with pytest.raises(RankDeficient):
        lee_carter_fit(m)


def test_rate_floor_warns(caplog):
    _, _, _, m = rank_one(1)
    m[0, 3] = 0.0
    fit = lee_carter_fit(m)
    assert "flooring" in caplog.text
    assert np.all(np.isfinite(fit.ax))
    with pytest.raises(ShapeMismatch):
        lee_carter_fit(m[:3])


@settings(max_examples=20)
@given(st.integers(0, 2**31))
def test_fitted_bx_normalized(seed):
    rng = np.random.default_rng(seed)
    m = np.exp(base_schedule()[0] + rng.normal(0, 0.1, (10, N)) + np.linspace(0, -1, 10)[:, None])
    assert abs(lee_carter_fit(m).bx.sum() - 1) < 1e-12


def test_shared_bx_panel():
    panel = {c: (np.arange(1953, 2014, 5), rank_one(s)[3]) for c, s in (("A", 1), ("B", 2))}
    indep = fit_lee_carter_panel(panel, "none")
    shared = fit_lee_carter_panel(panel)
    expected = (indep["A"].bx + indep["B"].bx) / 2
    assert np.allclose(shared["A"].bx, expected / expected.sum())
    assert np.array_equal(shared["A"].bx, shared["B"].bx)
    assert abs(shared["B"].kt.sum()) < 1e-10


def test_bisection_random_targets():
    params = schedule()
    targets = np.random.default_rng(3).uniform(30, 95, 1000)
    rates, k = rates_for_target_e0(params, targets, return_k=True)
    assert np.max(np.abs(e0_from_rates(rates) - targets)) < 1e-6
    assert np.all(np.diff(k[np.argsort(targets)]) < 0)


def test_bisection_fixed_point_and_shift():
    params = schedule(np.array([0.0, -2.0, -4.0]))
    e_last = e0_from_rates(params.rates(-4.0))
    rates, k = rates_for_target_e0(params, e_last, return_k=True)
    assert abs(k + 4.0) < 1e-6
    assert np.allclose(rates, params.rates(-4.0), rtol=1e-5)
    assert abs(e0_from_rates(rates_for_target_e0(params, e_last + 5)) - (e_last + 5)) < 1e-6


def test_bisection_analytic_toy_root():
    toy = grid_from_lowers([0, 5, 10])
    params = LeeCarterParams(np.log([0.02, 0.01, 0.10]), np.array([0.0, 0.0, 1.0]), np.zeros(1))
    _, k = rates_for_target_e0(params, 30.0, grid=toy, return_k=True, tol=1e-12)
    assert abs(float(k) - oracle("toy_k_root_target30")) < 1e-8


def test_bisection_unreachable():
    with pytest.raises(BracketFailure):
        rates_for_target_e0(schedule(), 15.0)
    toy = grid_from_lowers([0, 5, 10])
    params = LeeCarterParams(np.log([0.02, 0.01, 0.10]), np.array([1.0, 0.0, 0.0]), np.zeros(1))
    # only the first group moves; even zero mortality there leaves e0 below 20
    with pytest.raises(BracketFailure):
        rates_for_target_e0(params, 25.0, grid=toy)


def e0ns_traj(values):
    values = np.asarray(values, dtype=float)
    return TrajectorySet(["A"], 2018 + 5 * np.arange(values.shape[-1]), values[:, None, :], "male", "e0ns")


def test_reconstruct_no_smoking_round_trip():
    traj = e0ns_traj(np.random.default_rng(4).uniform(70, 90, (50, 9)))
    out = reconstruct_male_e0(traj, np.zeros((50, 1, 9, N)), {"A": schedule()})
    assert np.max(np.abs(out.values - traj.values)) < 1e-6


def test_reconstruct_ordering_and_pairing():
    rng = np.random.default_rng(5)
    traj = e0ns_traj(rng.uniform(70, 90, (40, 9)))
    y = np.zeros((40, 1, 9, N))
    y[:, :, :, 10:] = rng.uniform(0.01, 0.4, (40, 1, 9, 1))
    out = reconstruct_male_e0(traj, y, {"A": schedule()})
    assert np.all(out.values < traj.values)
    # draw i uses ASSAF draw i: permuting both permutes the result
    perm = rng.permutation(40)
    again = reconstruct_male_e0(e0ns_traj(traj.values[perm, 0]), y[perm], {"A": schedule()})
    assert np.allclose(again.values, out.values[perm], atol=1e-9)
    with pytest.raises(ShapeMismatch):
        reconstruct_male_e0(traj, y[:7], {"A": schedule()})


def test_reconstruct_converges_as_assaf_vanishes():
    traj = e0ns_traj(np.tile(np.linspace(75, 85, 9), (20, 1)))
    y = np.zeros((1, 1, 9, N))
    y[0, 0, :, 10:] = np.linspace(0.3, 0.0, 9)[:, None]
    out = reconstruct_male_e0(traj, y, {"A": schedule()})
    gap = np.median(traj.values - out.values, axis=0)[0]
    assert np.all(np.diff(gap) < 0)
    assert gap[-1] < 1e-6


def test_random_walk_baseline():
    ax, bx, kt, _ = rank_one(6)
    params = LeeCarterParams(ax, bx, kt)
    e0 = lee_carter_rwd_forecast(params, range(3), n_draws=500, rng=7)
    assert e0.shape == (500, 3)
    assert np.median(e0[:, 2]) > np.median(e0[:, 0]) > e0_from_rates(params.rates(kt[-1]))
    assert np.array_equal(e0, lee_carter_rwd_forecast(params, range(3), n_draws=500, rng=7))


def test_out_of_range_draws_clipped():
    traj = e0ns_traj(np.array([[75.0, 112.0, 80.0]]))
    out = reconstruct_male_e0(traj, np.zeros((1, 1, 3, N)), {"A": schedule()})
    assert out.meta["clipped_targets"] == 1
    assert abs(out.values[0, 0, 1] - 110.0) < 1e-6
