import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smokecast.config import ChainSettings, SyntheticSettings, desk_config
from smokecast.errors import TestDataMissing
from smokecast.trajectories import TrajectorySet, quantile_summary
from smokecast.errors import TooFewDraws
from smokecast.validation import coverage, mae, median_halfwidth, out_of_sample_validate, score_draws, split_periods


def test_mae_example():
    assert mae([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]) == 2.0
    assert mae([5.0, 5.0], [5.0, 5.0]) == 0.0


def test_constructed_intervals():
    obs = np.array([70.0, 75.0, 80.0])
    h = 1.5
    assert coverage(obs - h, obs + h, obs) == 1.0
    assert median_halfwidth(obs - h, obs + h) == h
    assert coverage(obs + 1, obs + 2, obs) == 0.0


def test_perfect_forecast_scores():
    obs = np.array([70.0, 75.0, 80.0])
    s = score_draws(np.tile(obs, (200, 1)), obs)
    assert s["mae"] == 0.0 and s["coverage80"] == 1.0 and s["coverage95"] == 1.0 and s["halfwidth95"] == 0.0


@settings(max_examples=50)
@given(arrays(float, 12, elements=st.floats(-10, 10)), st.integers(0, 2**31))
def test_mae_symmetric_and_order_free(err, seed):
    obs = np.linspace(60, 80, 12)
    perm = np.random.default_rng(seed).permutation(12)
    assert mae(obs + err, obs) == pytest.approx(mae(obs - err, obs), abs=1e-12)
    assert mae((obs + err)[perm], obs[perm]) == pytest.approx(mae(obs + err, obs), abs=1e-12)


def test_split_periods():
    periods = list(range(1953, 2014, 5))
    train, test = split_periods(periods, 2000)
    assert train[-1] == 1998 and list(test) == [2003, 2008, 2013]
    train, test = split_periods(periods, 2010)
    assert list(test) == [2013]


def test_quantile_summary_rules():
    values = np.arange(1, 1001, dtype=float)[:, None, None]
    table = quantile_summary(TrajectorySet(["A"], [2018], values))
    assert table.loc[0, "q0.5"] == 500.5
    const = quantile_summary(TrajectorySet(["A"], [2018], np.full((100, 1, 1), 3.0)))
    assert np.all(const.filter(like="q0").to_numpy() == 3.0)
    rng = np.random.default_rng(0)
    t = quantile_summary(TrajectorySet(["A", "B"], [2018, 2023], rng.normal(size=(300, 2, 2))))
    q = t.filter(like="q0").to_numpy()
    assert np.all(np.diff(q, axis=1) >= 0)
    with pytest.raises(TooFewDraws):
        quantile_summary(TrajectorySet(["A"], [2018], np.ones((99, 1, 1))))


TINY = ChainSettings(600, 300, 3, 1)


def test_missing_test_periods(tmp_path):
    cfg = desk_config(str(tmp_path / "out"), synthetic=SyntheticSettings(n_countries=2, n_periods=8))
    with pytest.raises(TestDataMissing):
        out_of_sample_validate(cfg, split=2000, methods=("lee_carter",))


def test_validation_table(tmp_path):
    cfg = desk_config(
        str(tmp_path / "out"),
        samples=1,
        synthetic=SyntheticSettings(n_countries=3),
        assaf_chain=TINY,
        e0ns_chain=TINY,
    )
    metrics, inclusion = out_of_sample_validate(cfg, split=2000, n_baseline=200)
    assert list(metrics["method"]) == ["smokecast", "smokecast", "lee_carter", "lee_carter"]
    assert set(metrics["sex"]) == {"male", "female"}
    assert np.all(metrics["n_cells"] == 9)
    assert np.all((metrics["coverage95"] >= metrics["coverage80"] - 1e-12))
    assert np.all(metrics["halfwidth95"] >= metrics["halfwidth80"])
    assert set(inclusion["test_cells"]) == {3}
    assert (tmp_path / "out" / "validate_2000" / "metrics.csv").exists()
