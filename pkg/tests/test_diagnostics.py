import numpy as np
import pytest
from conftest import oracle

from smokecast.diagnostics import minimum_iid_size, raftery_lewis, raftery_lewis_table
from smokecast.errors import ChainTooShort
from smokecast.mcmc import ChainConfig, PosteriorDraws


def ar1(rho, n, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0]
    for t in range(1, n):
        x[t] = rho * x[t - 1] + np.sqrt(1 - rho**2) * e[t]
    return x


def test_minimum_iid_size():
    assert minimum_iid_size(0.025, 0.0125, 0.95) == oracle("raftery_lewis_nmin")


def test_iid_dependence_near_one():
    entry = raftery_lewis(np.random.default_rng(0).standard_normal(100_000))
    assert 0.8 <= entry.dependence <= 1.5
    assert entry.n_min == 600


def test_iid_bernoulli_indicator_chain():
    z = (np.random.default_rng(1).uniform(size=100_000) < 0.025).astype(float)
    entry = raftery_lewis(-z + np.random.default_rng(2).uniform(0, 1e-6, z.size))
    assert 0.8 <= entry.dependence <= 1.5


def test_dependence_grows_with_autocorrelation():
    factors = [raftery_lewis(ar1(rho, 100_000, 3)).dependence for rho in (0.0, 0.8, 0.95)]
    assert factors[0] < factors[1] < factors[2]
    assert factors[2] > 1.5


def test_short_chain_rejected():
    with pytest.raises(ChainTooShort) as info:
        raftery_lewis(np.zeros(100))
    assert info.value.minimum == 600


def test_table_layout():
    rng = np.random.default_rng(4)
    draws = PosteriorDraws(["a", "fixed"], np.column_stack([rng.standard_normal(5000), np.ones(5000)]), ChainConfig())
    rows = raftery_lewis_table(draws)
    assert [r["parameter"] for r in rows] == ["a", "fixed"]
    assert set(rows[0]) == {"parameter", "Burn1", "Size1", "DF1", "Burn2", "Size2", "DF2"}
    assert rows[1]["Size1"] is None
    assert 300 < rows[0]["Size1"] < 1500
