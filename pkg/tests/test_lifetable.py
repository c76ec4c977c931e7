import numpy as np
import pytest
from conftest import oracle
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smokecast.data import DEFAULT_GRID, Slice, grid_from_lowers
from smokecast.errors import (
    AttributionAtUnity,
    NonFiniteRate,
    OpenGroupZeroRate,
    ShapeMismatch,
    ZeroTotalMortality,
)
from smokecast.lifetable import (
    allcause_from_nonsmoking,
    asaf_from_assaf,
    e0_from_rates,
    e0ns_series,
    life_table,
    life_table_e0,
    nonsmoking_rates,
)

TOY = grid_from_lowers([0, 5, 10])
TOY_M = np.array([0.02, 0.01, 0.10])
N = len(DEFAULT_GRID)


def realistic_rates(rng, size=()):
    base = np.exp(np.linspace(np.log(0.002), np.log(0.25), N))
    base[:2] = [0.02, 0.002]
    return base * rng.uniform(0.7, 1.4, size + (N,))


def test_zero_mortality_to_open_group():
    m = np.zeros(N)
    m[-1] = 0.5
    e0, _ = life_table_e0(m)
    assert abs(e0 - 102.0) < 1e-9


def test_toy_grid_matches_hand_oracle():
    e0, table = life_table_e0(TOY_M, TOY)
    assert abs(e0 - oracle("e0_toy")) < 1e-9
    assert table.qx[-1] == 1.0


def test_toy_ns_matches_hand_oracle():
    dns = nonsmoking_rates(TOY_M, np.array([0.0, 0.5, 0.0]))
    assert abs(e0_from_rates(dns, TOY) - oracle("e0_toy_ns")) < 1e-9


def test_doubling_rates_lowers_e0():
    assert e0_from_rates(2 * TOY_M, TOY) < e0_from_rates(TOY_M, TOY)


def test_life_table_errors():
    m = np.full(N, 0.01)
    m[-1] = 0.0
    with pytest.raises(OpenGroupZeroRate):
        life_table(m)
    m[-1] = np.nan
    with pytest.raises(NonFiniteRate):
        life_table(m)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_life_table_identities(seed):
    t = life_table(realistic_rates(np.random.default_rng(seed)))
    assert np.allclose(t.Tx, np.cumsum(t.Lx[::-1])[::-1], rtol=1e-10, atol=0)
    assert np.allclose(t.ex, t.Tx / t.lx, rtol=1e-10, atol=0)
    assert np.allclose(t.lx[1:], t.lx[:-1] * (1 - t.qx[:-1]), rtol=1e-10, atol=0)
    assert np.all(np.diff(t.lx) <= 0) and np.all((t.qx >= 0) & (t.qx <= 1))
    assert t.e0 == pytest.approx(e0_from_rates(t.mx), rel=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(0, N - 1))
def test_e0_strictly_decreasing_in_each_rate(seed, j):
    m = realistic_rates(np.random.default_rng(seed))
    bumped = m.copy()
    bumped[j] *= 1.01
    assert e0_from_rates(bumped) < e0_from_rates(m)


def test_vectorized_matches_scalar(rng):
    m = realistic_rates(rng, (4, 3))
    batch = e0_from_rates(m)
    assert batch.shape == (4, 3)
    assert batch[2, 1] == pytest.approx(life_table_e0(m[2, 1])[0], rel=1e-12)


def test_nonsmoking_examples():
    d = np.array([0.02, 1.0])
    assert np.allclose(nonsmoking_rates(d, np.zeros(2)), d)
    assert nonsmoking_rates(np.array([0.02]), np.array([0.25]))[0] == pytest.approx(0.015)
    assert nonsmoking_rates(np.array([1.0]), np.array([0.999]))[0] == pytest.approx(0.001)
    assert allcause_from_nonsmoking(np.array([0.015]), np.array([0.25]))[0] == pytest.approx(0.02)
    with pytest.raises(ShapeMismatch):
        nonsmoking_rates(np.ones(3), np.zeros(4))
    with pytest.raises(AttributionAtUnity):
        allcause_from_nonsmoking(np.ones(2), np.array([0.5, 1.0]))


@given(
    arrays(float, 22, elements=st.floats(1e-6, 2.0)),
    arrays(float, 22, elements=st.floats(0.0, 0.9)),
)
def test_adjustment_round_trip(d, y):
    back = nonsmoking_rates(allcause_from_nonsmoking(d, y), y)
    assert np.max(np.abs(back - d) / d) < 1e-12
    dns = nonsmoking_rates(d, y)
    assert np.all((dns >= 0) & (dns <= d))


def test_asaf_examples():
    m = np.random.default_rng(3).uniform(0.001, 0.1, N)
    assert asaf_from_assaf(np.full(N, 0.3), m) == pytest.approx(0.3)
    y = np.zeros(N)
    y[[g.lower for g in DEFAULT_GRID].index(40)] = 0.2
    assert asaf_from_assaf(y, np.ones(N)) == pytest.approx(0.2 / 22, abs=1e-15)
    young = np.where(np.arange(N) < 5, 1.0, 1e-12)
    assert asaf_from_assaf(y, young) < 1e-10
    with pytest.raises(ZeroTotalMortality):
        asaf_from_assaf(y, np.zeros(N))


def test_e0ns_series_ordering(rng):
    periods = np.array([1953, 1958])
    d = realistic_rates(rng, (2,))
    mort = Slice(periods, d)
    _, zero = e0ns_series(mort, Slice(periods, np.zeros((2, N))))
    assert np.array_equal(zero, e0_from_rates(d))
    y = np.zeros((2, N))
    y[:, 10:] = 0.3
    _, ens = e0ns_series(mort, Slice(periods, y))
    assert np.all(ens > e0_from_rates(d))


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_smoking_gap_nonnegative(seed):
    r = np.random.default_rng(seed)
    d = realistic_rates(r)
    y = r.uniform(0, 0.9, N)
    assert e0_from_rates(nonsmoking_rates(d, y)) >= e0_from_rates(d)
