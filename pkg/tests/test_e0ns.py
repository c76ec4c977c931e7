import numpy as np
import pytest
from conftest import oracle
from hypothesis import given, settings
from hypothesis import strategies as st

from smokecast.data import E0Series, Sex
from smokecast.e0ns import (
    LOWER,
    PARAM_NAMES,
    UPPER,
    E0nsData,
    E0nsPriors,
    VarianceSpline,
    fit_e0ns_bhm,
    fit_variance_spline,
    forecast_e0ns,
    gain_curve,
)
from smokecast.errors import EmptySlice, InsufficientSpread
from smokecast.mcmc import ChainConfig, PosteriorDraws

zeta_st = st.tuples(
    st.floats(0, 100), st.floats(0.5, 100), st.floats(0, 100), st.floats(0.5, 100), st.floats(0, 15), st.floats(0, 1.15)
)


def one_country_draws(zeta, omega, n=1, spline=None, jumpoff=70.0):
    names = [f"{p}[X]" for p in PARAM_NAMES]
    row = np.concatenate([zeta, [omega]])
    meta = {"countries": ["X"], "jumpoff": [jumpoff], "last_period": 2013, "sex": "male"}
    if spline is not None:
        meta["spline"] = spline.to_dict()
    return PosteriorDraws(names, np.tile(row, (n, 1)), ChainConfig(), meta=meta)


def test_gain_oracle():
    assert gain_curve(55.0, 15, 40, 0, 20, 3, 0.4) == pytest.approx(oracle("g_gain_55"), abs=1e-13)


@settings(max_examples=300)
@given(zeta_st)
def test_gain_tails(zeta):
    a1, a2, a3, a4, w, z = zeta
    top = a1 + a2 + a3 + 10 * a4
    top = max(top, a1 + 11 * a2)
    e = top + np.linspace(1e-9, 500, 20)
    assert np.all(np.abs(gain_curve(e, *zeta) - z) < 1e-6)
    low = min(a1 - 10 * a2, a1 + a2 + a3 - 10 * a4)
    assert np.all(np.abs(gain_curve(low - np.linspace(1e-9, 500, 20), *zeta)) < 1e-6)


@settings(max_examples=100)
@given(zeta_st)
def test_gain_is_two_monotone_terms(zeta):
    a1, a2, a3, a4, w, z = zeta
    e = np.linspace(-200, 400, 3001)
    first = gain_curve(e, a1, a2, a3, a4, w, w)  # second term vanishes
    second = gain_curve(e, a1, a2, a3, a4, 0.0, z - w)
    assert np.all(np.diff(first) >= -1e-12)
    assert np.allclose(first + second, gain_curve(e, *zeta), atol=1e-12)
    assert np.all(np.diff(second) * np.sign(z - w) >= -1e-12)


def test_zero_width_is_step():
    e = np.array([10.0, 30.0, 50.0])
    out = gain_curve(e, 20, 0, 100, 10, 2.0, 0.5)
    assert np.allclose(out, [0.0, 2.0, 2.0], atol=1e-12)


def test_spline_flat_and_floor():
    rng = np.random.default_rng(0)
    x = rng.uniform(40, 80, 200)
    phi = fit_variance_spline(x, np.full(x.size, 0.5))
    assert np.allclose(phi(np.linspace(40, 80, 50)), 0.5, atol=1e-8)
    tiny = fit_variance_spline(x, np.zeros(x.size))
    assert np.all(tiny(np.linspace(0, 120, 30)) >= 0.01)


def test_spline_clamped_beyond_data():
    rng = np.random.default_rng(1)
    x = rng.uniform(40, 80, 200)
    phi = fit_variance_spline(x, 0.2 + 0.01 * x + 0.05 * rng.standard_normal(x.size) ** 2)
    assert phi(95.0) == phi(phi.upper) == phi(phi.upper + 30)
    assert phi(10.0) == phi(phi.lower)
    assert phi.upper == x.max()


def test_spline_follows_linear_trend():
    x = np.linspace(40, 85, 300)
    phi = fit_variance_spline(x, 0.1 + 0.02 * (x - 40))
    assert np.all(np.diff(phi(np.linspace(40, 85, 200))) > 0)


def test_spline_errors_and_round_trip():
    with pytest.raises(InsufficientSpread):
        fit_variance_spline(np.linspace(60, 65, 50), np.ones(50))
    with pytest.raises(InsufficientSpread):
        fit_variance_spline(np.linspace(40, 80, 10), np.ones(10))
    phi = fit_variance_spline(np.linspace(40, 80, 50), np.linspace(0.3, 1.0, 50))
    back = VarianceSpline.from_dict(phi.to_dict())
    assert np.array_equal(back(np.linspace(30, 90, 7)), phi(np.linspace(30, 90, 7)))
    assert list(phi.to_frame().columns) == ["knot", "coefficient"]
    assert VarianceSpline.constant(0.7)(np.array([1.0, 1e3])).tolist() == [0.7, 0.7]


def test_forecast_flat_and_linear():
    flat = forecast_e0ns(one_country_draws([15, 40, 0, 20, 0, 0], 0.0), horizon=9, rng=0)
    assert np.all(flat.values == 70.0)
    assert list(flat.periods) == list(range(2018, 2059, 5))
    lin = forecast_e0ns(one_country_draws([0, 1, 0, 1, 0.5, 0.3], 0.0, jumpoff=80.0), horizon=5, rng=0)
    assert np.allclose(np.diff(np.concatenate([[80.0], lin.values[0, 0]])), 0.3, atol=1e-12)


def test_forecast_matches_brute_force_recursion():
    zeta = np.array([15.0, 40.0, 0.2, 20.0, 3.0, 0.4])
    phi = fit_variance_spline(np.linspace(45, 80, 60), np.linspace(0.8, 0.4, 60))
    n = 100_000
    traj = forecast_e0ns(one_country_draws(zeta, 0.6, n=n, spline=phi, jumpoff=60.0), horizon=9, rng=1)
    rng = np.random.default_rng(2)
    e = np.full(n, 60.0)
    for _ in range(9):
        level = np.clip(e, 45, 80)
        scale = 0.6 * np.interp(level, [45, 80], [0.8, 0.4])
        e = e + gain_curve(e, *zeta) + scale * rng.standard_normal(n)
    ours = np.median(traj.values[:, 0, -1])
    se = 1.2533 * e.std() / np.sqrt(n)
    assert abs(ours - np.median(e)) < 4 * np.sqrt(2) * se


def test_one_step_moments():
    zeta = np.array([10.0, 30.0, 1.0, 15.0, 4.0, 0.5])
    phi = fit_variance_spline(np.linspace(45, 80, 60), np.linspace(0.5, 1.0, 60))
    n = 1_000_000
    step = forecast_e0ns(one_country_draws(zeta, 0.7, n=n, spline=phi, jumpoff=65.0), horizon=1, rng=3).values[:, 0, 0] - 65.0
    g = gain_curve(65.0, *zeta)
    sd = 0.7 * phi(65.0)
    assert abs(step.mean() - g) < 4 * sd / np.sqrt(n)
    assert abs(step.var() / sd**2 - 1) < 4 * np.sqrt(2 / n)


def test_data_requirements():
    short = E0Series({("A", Sex.MALE): (np.array([1953, 1958, 1963]), np.array([60.0, 61.0, 62.0]))})
    with pytest.raises(EmptySlice):
        E0nsData.from_series(short)
    gap = E0Series({("A", Sex.MALE): (np.array([1953, 1958, 1968, 1973]), np.array([60.0, 61, 62, 63]))})
    with pytest.raises(EmptySlice):
        E0nsData.from_series(gap)


def test_priors_as_printed():
    p = E0nsPriors()
    means, variances = p.mean_prior()
    assert means[0] == 15.77 and variances[0] == pytest.approx(15.6**2)
    shapes, scales = p.var_prior()
    assert np.all(shapes == 2.0) and scales[1] == pytest.approx(14.5**2)


def synthetic_series(seed=5, n_countries=6):
    rng = np.random.default_rng(seed)
    zeta = np.array([15.77, 40.97, 0.21, 19.82, 2.93, 0.4])
    series = {}
    for i in range(n_countries):
        e = [55.0 + 3 * i]
        for _ in range(12):
            e.append(e[-1] + gain_curve(e[-1], *zeta) + 0.5 * rng.standard_normal())
        series[(f"C{i}", Sex.MALE)] = (np.arange(1953, 2014, 5), np.array(e))
    return E0Series(series)


SMALL_CHAIN = ChainConfig(1500, 500, 5, 1, seed=6)


@pytest.fixture(scope="module")
def small_fit():
    return fit_e0ns_bhm(synthetic_series(), SMALL_CHAIN)


def test_fit_support_and_meta(small_fit):
    d = small_fit
    for c in d.meta["countries"]:
        assert np.all((d.column(f"omega[{c}]") >= 0) & (d.column(f"omega[{c}]") <= 10))
        assert np.all((d.column(f"z[{c}]") >= 0) & (d.column(f"z[{c}]") <= 1.15))
        params = d.columns([f"{p}[{c}]" for p in PARAM_NAMES])
        assert np.all(params >= LOWER) and np.all(params <= UPPER)
    assert d.meta["last_period"] == 2013 and len(d.meta["jumpoff"]) == 6
    phi = VarianceSpline.from_dict(d.meta["spline"])
    assert not phi.is_constant
    traj = forecast_e0ns(d, rng=7)
    assert traj.values.shape == (d.n_draws, 6, 9)
    assert np.all(np.isfinite(traj.values))


def test_fit_deterministic(small_fit):
    again = fit_e0ns_bhm(synthetic_series(), SMALL_CHAIN)
    assert np.array_equal(again.draws, small_fit.draws)


def test_small_samples_use_fewer_knots():
    x = np.linspace(60, 80, 36)
    few = fit_variance_spline(x, np.abs(np.sin(x)))
    many = fit_variance_spline(np.linspace(60, 80, 200), np.abs(np.sin(np.linspace(60, 80, 200))))
    assert len(few.knots) == 8  # no interior knots
    assert len(many.knots) == 8 + 5
