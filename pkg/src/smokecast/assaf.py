"""Age-cohort hierarchical model for age-specific smoking-attributable fractions.

Each country's ASSAF surface is modelled as an age effect times a cohort
effect, with separate cohort effects for the 80+ group.  Cohort effects
scatter around a double-logistic curve in birth year; the 80+ curve is the
same curve with its decline shifted by ``delta`` years.  Country parameters
are tied together through global hyperparameters.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy.special import expit

from .data import (
    ASSAF_AGES,
    COHORT_ORIGIN,
    DEFAULT_GRID,
    FORECAST_LABELS,
    AgeCohortMatrix,
    AssafSurface,
    Sex,
    Slice,
    build_age_cohort_matrix,
    expand_core,
)
from .errors import CountExceedsDraws, EmptySlice, InitializationFailure, NonFiniteLik
from .lifetable import Y_MAX
from .mcmc import (
    Block,
    BlockAdapter,
    GibbsBlock,
    gamma_logpdf,
    make_rng,
    normal_logpdf,
    normal_posterior,
    run_chain,
    sample_gig,
)

N_AGES = len(ASSAF_AGES)
THETA_NAMES = ("D1", "D2", "D3", "D4", "k", "delta")


def double_logistic_cohort(c, d1, d2, d3, d4, k):
    """Cohort curve ``g(c)``: a logistic rise minus a delayed logistic fall.

    All arguments broadcast.  Uses ``expit`` so extreme arguments neither
    overflow nor lose the tails.
    """
    c = np.asarray(c, dtype=float) - COHORT_ORIGIN
    return k * (expit(d1 * (c - d2)) - expit(d3 * (c - d2 - d4)))


def _g(cohorts, theta, shifted=False):
    """Curve values for every country: ``theta`` is (L, 6), result (L, C)."""
    d1, d2, d3, d4, k, delta = (theta[:, i : i + 1] for i in range(6))
    if shifted:
        d4 = d4 + delta
    return double_logistic_cohort(cohorts[None, :], d1, d2, d3, d4, k)


@dataclass(frozen=True)
class AssafPriors:
    """Level-3 hyperprior constants (variances, IG shape/scale, Gamma shape/rate)."""

    mu_beta: tuple = (1.0, 5.0)
    sigma2_beta: tuple = (2.0, 5.0)
    sigma2: tuple = (2.0, 0.01)
    sigma2_tau: tuple = (2.0, 0.01)
    mu_D1: tuple = (2.0, 0.1)
    mu_D2: tuple = (20.0, 1000.0)
    mu_D3: tuple = (2.0, 0.1)
    mu_D4: tuple = (20.0, 1000.0)
    mu_k: tuple = (0.3, 0.25)
    mu_delta: tuple = (0.0, 100.0)
    sigma2_D2: tuple = (2.0, 1000.0)
    sigma2_D4: tuple = (2.0, 1000.0)
    sigma2_k: tuple = (2.0, 0.25)
    sigma2_delta: tuple = (2.0, 100.0)
    sigma2_l_shape: float = 2.0
    rate_shape: float = 2.0  # Gamma(2, 2 / mu) prior on D1 and D3


GLOBAL_SCALARS = (
    "sigma2",
    "sigma2_tau",
    "mu_D1",
    "mu_D2",
    "sigma2_D2",
    "mu_D3",
    "mu_D4",
    "sigma2_D4",
    "mu_k",
    "sigma2_k",
    "mu_delta",
    "sigma2_delta",
)


class AssafData:
    """Age-cohort matrices of several countries stacked on a shared cohort axis."""

    def __init__(self, matrices, countries):
        self.countries = list(countries)
        lo = min(int(m.cohorts[0]) for m in matrices)
        hi = max(int(m.cohorts[-1]) for m in matrices)
        self.cohorts = np.arange(lo, hi + 1, 5)
        L, C = len(matrices), self.cohorts.size
        self.y = np.zeros((L, N_AGES, C))
        self.mask = np.zeros((L, N_AGES, C), dtype=bool)
        for i, m in enumerate(matrices):
            off = (int(m.cohorts[0]) - lo) // 5
            obs = m.observed
            self.mask[i, :, off : off + m.cohorts.size] = obs
            self.y[i, :, off : off + m.cohorts.size] = np.where(obs, m.values, 0.0)
        self.tau_active = self.mask[:, :-1, :].any(axis=1)
        self.taut_active = self.mask[:, -1, :]
        self.n_obs = self.mask.sum(axis=(1, 2))
        periods = set()
        for m in matrices:
            periods.update(int(p) for p in m.periods())
        self.periods = np.array(sorted(periods))

    @classmethod
    def from_surface(cls, surface, sex=Sex.MALE, countries=None, min_periods=3):
        sex = Sex.parse(sex)
        countries = countries or surface.countries(sex)
        if not countries:
            raise EmptySlice(f"no {sex.value} ASSAF data")
        matrices = []
        for c in countries:
            sl = surface.get(c, sex)
            if sl.periods.size < min_periods:
                raise EmptySlice(f"{c} has {sl.periods.size} observed periods; need {min_periods}", key=(c, sex.value))
            matrices.append(build_age_cohort_matrix(surface, c, sex))
        return cls(matrices, countries)

    def matrix(self, i):
        return AgeCohortMatrix(ASSAF_AGES, self.cohorts.copy(), np.where(self.mask[i], self.y[i], np.nan))


# ------------------------------------------------------------------ state

def _expected_core(state, data):
    """Level-1 means ``xi_x * tau_c`` (ages < 80) and ``xi_80 * taut_c``."""
    mean = state["xi"][:, :, None] * state["tau"][:, None, :]
    mean[:, -1, :] = state["xi"][:, -1:] * state["taut"]
    return mean


def assaf_level1_loglik(state, data):
    """Normal log density of every observed cell under the Level-1 means."""
    mean = _expected_core(state, data)
    var = state["s2l"][:, None, None]
    dens = normal_logpdf(data.y, mean, var)
    if not np.all(np.isfinite(dens[data.mask])):
        bad = np.argwhere(data.mask & ~np.isfinite(dens))[0]
        raise NonFiniteLik(
            f"non-finite density at country {data.countries[bad[0]]}, age {ASSAF_AGES[bad[1]]}, cohort {data.cohorts[bad[2]]}"
        )
    return float(dens[data.mask].sum())


def initial_state(data, rng=None):
    """Data-driven starting point (deterministic)."""
    L, C = len(data.countries), data.cohorts.size
    young = data.mask[:, :-1, :]
    with np.errstate(invalid="ignore"):
        col_mean = np.where(data.tau_active, (data.y[:, :-1, :] * young).sum(axis=1) / np.maximum(young.sum(axis=1), 1), np.nan)
    theta = np.zeros((L, 6))
    for i in range(L):
        means = col_mean[i]
        finite = np.isfinite(means)
        k0 = float(np.nanmax(means)) if finite.any() else 0.1
        k0 = max(k0, 0.01)
        peak = float(data.cohorts[np.nanargmax(np.where(finite, means, -np.inf))])
        high = data.cohorts[finite & (means > 0.5 * k0)]
        d4 = float(max(20.0, high.max() - high.min())) if high.size else 30.0
        theta[i] = (0.1, peak - COHORT_ORIGIN - 0.5 * d4, 0.1, d4, k0, 0.0)
    tau = np.where(data.tau_active, np.nan_to_num(col_mean), 0.0)
    taut = np.where(data.taut_active, data.y[:, -1, :], 0.0)
    g = _g(data.cohorts, theta)
    gt = _g(data.cohorts, theta, shifted=True)
    tau = np.where(data.tau_active, tau, g)
    taut = np.where(data.taut_active, taut, gt)
    state = {
        "xi": np.ones((L, N_AGES)),
        "tau": tau,
        "taut": taut,
        "theta": theta,
        "s2l": np.full(L, 0.01),
        "mu_beta": np.ones(N_AGES - 1),
        "sigma2_beta": np.full(N_AGES - 1, 5.0),
        "sigma2": 0.01,
        "sigma2_tau": 0.01,
        "mu_D1": 0.1,
        "mu_D2": float(theta[:, 1].mean()),
        "sigma2_D2": 1000.0,
        "mu_D3": 0.1,
        "mu_D4": float(theta[:, 3].mean()),
        "sigma2_D4": 1000.0,
        "mu_k": 0.3,
        "sigma2_k": 0.25,
        "mu_delta": 0.0,
        "sigma2_delta": 100.0,
    }
    if not all(np.all(np.isfinite(v)) for v in state.values()):
        raise InitializationFailure("heuristic start produced non-finite values")
    return state


# ------------------------------------------------------------------ blocks

def _theta_log_target(state, data, priors):
    tau, taut, active, active_t = state["tau"], state["taut"], data.tau_active, data.taut_active
    cohorts = data.cohorts

    def log_target(theta):
        s2tau = state["sigma2_tau"]
        ll = np.where(active, normal_logpdf(tau, _g(cohorts, theta), s2tau), 0.0).sum(axis=1)
        ll += np.where(active_t, normal_logpdf(taut, _g(cohorts, theta, shifted=True), s2tau), 0.0).sum(axis=1)
        shape = priors.rate_shape
        lp = gamma_logpdf(theta[:, 0], shape, shape / state["mu_D1"])
        lp = lp + gamma_logpdf(theta[:, 2], shape, shape / state["mu_D3"])
        lp = lp + normal_logpdf(theta[:, 1], state["mu_D2"], state["sigma2_D2"])
        lp = lp + normal_logpdf(theta[:, 3], state["mu_D4"], state["sigma2_D4"])
        lp = lp + normal_logpdf(theta[:, 4], state["mu_k"], state["sigma2_k"])
        lp = lp + normal_logpdf(theta[:, 5], state["mu_delta"], state["sigma2_delta"])
        return ll + lp

    return log_target


class ThetaBlock(Block):
    """Joint random-walk update of the curve parameters, one batch row per country."""

    name = "theta"
    lower = np.array([0.0, -np.inf, 0.0, -np.inf, -np.inf, -np.inf])
    upper = np.full(6, np.inf)

    def __init__(self, data, priors, n_countries):
        self.data, self.priors = data, priors
        init = np.array([0.02, 2.0, 0.02, 2.0, 0.02, 2.0])
        self.adapter = BlockAdapter(init, batch_shape=(n_countries,), covariance=True)

    def update(self, state, rng, adapting):
        target = _theta_log_target(state, self.data, self.priors)
        new, accepted, _ = self.adapter.step(state["theta"], target, (self.lower, self.upper), rng)
        state["theta"] = new
        return int(np.sum(accepted)), accepted.size


class RateMeanBlock(Block):
    """MH for the Gamma-prior means of D1 and D3 (batch of two scalars)."""

    name = "mu_D1_D3"

    def __init__(self, priors):
        self.priors = priors
        self.adapter = BlockAdapter(np.array([0.03]), batch_shape=(2,))

    def update(self, state, rng, adapting):
        shape = self.priors.rate_shape
        values = state["theta"][:, [0, 2]]
        hyper = np.array([self.priors.mu_D1, self.priors.mu_D3])

        def log_target(mu):
            mu = mu[..., 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                lp = np.array([gamma_logpdf(values[:, j], shape, shape / mu[j]).sum() for j in range(2)])
            return lp + gamma_logpdf(mu, hyper[:, 0], hyper[:, 1])

        current = np.array([[state["mu_D1"]], [state["mu_D3"]]])
        new, accepted, _ = self.adapter.step(current, log_target, (np.array([0.0]), np.array([np.inf])), rng)
        state["mu_D1"], state["mu_D3"] = float(new[0, 0]), float(new[1, 0])
        return int(np.sum(accepted)), 2


def _update_tau(state, data, rng):
    xi, s2l, s2tau = state["xi"], state["s2l"][:, None], state["sigma2_tau"]
    young = data.mask[:, :-1, :]
    xy = (xi[:, :-1, None] * data.y[:, :-1, :] * young).sum(axis=1)
    xx = (xi[:, :-1, None] ** 2 * young).sum(axis=1)
    g = _g(data.cohorts, state["theta"])
    mean, var = normal_posterior(g, s2tau, xx, xy, s2l)
    draw = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
    state["tau"] = np.where(data.tau_active, draw, g)

    old = data.mask[:, -1, :]
    xi80 = xi[:, -1:]
    gt = _g(data.cohorts, state["theta"], shifted=True)
    mean, var = normal_posterior(gt, s2tau, xi80**2 * old, xi80 * data.y[:, -1, :] * old, s2l)
    draw = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
    state["taut"] = np.where(data.taut_active, draw, gt)


def _update_xi(state, data, rng):
    tau_by_age = np.repeat(state["tau"][:, None, :], N_AGES, axis=1)
    tau_by_age[:, -1, :] = state["taut"]
    m = data.mask[:, 1:, :]
    t = tau_by_age[:, 1:, :]
    ty = (t * data.y[:, 1:, :] * m).sum(axis=2)
    tt = (t**2 * m).sum(axis=2)
    mean, var = normal_posterior(state["mu_beta"][None, :], state["sigma2_beta"][None, :], tt, ty, state["s2l"][:, None])
    state["xi"][:, 1:] = mean + np.sqrt(var) * rng.standard_normal(mean.shape)


def _update_s2l(state, data, rng, priors):
    resid = np.where(data.mask, data.y - _expected_core(state, data), 0.0)
    ss = (resid**2).sum(axis=(1, 2))
    shape = priors.sigma2_l_shape + 0.5 * data.n_obs
    scale = state["sigma2"] + 0.5 * ss
    state["s2l"] = scale / rng.gamma(shape)


def _update_globals(state, data, rng, priors):
    L = len(data.countries)
    xi = state["xi"][:, 1:]
    # age-effect means and variances
    m0, v0 = priors.mu_beta
    mean, var = normal_posterior(m0, v0, L, xi.sum(axis=0), state["sigma2_beta"])
    state["mu_beta"] = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
    a0, b0 = priors.sigma2_beta
    ss = ((xi - state["mu_beta"]) ** 2).sum(axis=0)
    state["sigma2_beta"] = (b0 + 0.5 * ss) / rng.gamma(a0 + 0.5 * L, size=ss.shape)
    # scale of the country noise variances: GIG full conditional
    a0, b0 = priors.sigma2
    alpha = priors.sigma2_l_shape
    state["sigma2"] = sample_gig(L * alpha - a0, 2.0 * np.sum(1.0 / state["s2l"]), 2.0 * b0, rng)
    # cohort-effect variance
    res = np.concatenate(
        [
            (state["tau"] - _g(data.cohorts, state["theta"]))[data.tau_active],
            (state["taut"] - _g(data.cohorts, state["theta"], shifted=True))[data.taut_active],
        ]
    )
    a0, b0 = priors.sigma2_tau
    state["sigma2_tau"] = (b0 + 0.5 * np.sum(res**2)) / rng.gamma(a0 + 0.5 * res.size)
    # normal hyperparameters of the curve
    for col, mu_name, s2_name in ((1, "mu_D2", "sigma2_D2"), (3, "mu_D4", "sigma2_D4"), (4, "mu_k", "sigma2_k"), (5, "mu_delta", "sigma2_delta")):
        vals = state["theta"][:, col]
        m0, v0 = getattr(priors, mu_name)
        mean, var = normal_posterior(m0, v0, L, vals.sum(), state[s2_name])
        state[mu_name] = float(rng.normal(mean, np.sqrt(var)))
        a0, b0 = getattr(priors, s2_name)
        state[s2_name] = float((b0 + 0.5 * np.sum((vals - state[mu_name]) ** 2)) / rng.gamma(a0 + 0.5 * L))


# ------------------------------------------------------------------ model

class AssafModel:
    """Block model consumed by :func:`smokecast.mcmc.run_chain`."""

    def __init__(self, data, priors=None):
        self.data = data
        self.priors = priors or AssafPriors()
        self.param_names = _param_names(data)

    def initialize(self, rng):
        return initial_state(self.data, rng)

    def make_blocks(self):
        d, p = self.data, self.priors
        return [
            GibbsBlock("tau", lambda s, r: _update_tau(s, d, r)),
            GibbsBlock("xi", lambda s, r: _update_xi(s, d, r)),
            GibbsBlock("sigma2_l", lambda s, r: _update_s2l(s, d, r, p)),
            ThetaBlock(d, p, len(d.countries)),
            RateMeanBlock(p),
            GibbsBlock("globals", lambda s, r: _update_globals(s, d, r, p)),
        ]

    def flatten(self, state):
        parts = [
            state["xi"].ravel(),
            state["tau"][self.data.tau_active],
            state["taut"][self.data.taut_active],
            state["theta"].ravel(),
            state["s2l"],
            state["mu_beta"],
            state["sigma2_beta"],
            np.array([state[n] for n in GLOBAL_SCALARS]),
        ]
        return np.concatenate(parts)

    def meta(self):
        return {
            "model": "assaf",
            "countries": self.data.countries,
            "cohorts": self.data.cohorts.tolist(),
            "tau_active": self.data.tau_active.astype(int).tolist(),
            "taut_active": self.data.taut_active.astype(int).tolist(),
            "periods": self.data.periods.tolist(),
            "priors": asdict(self.priors),
        }


def _param_names(data):
    names = []
    for c in data.countries:
        names += [f"xi[{c}][{x}]" for x in ASSAF_AGES]
    for i, c in enumerate(data.countries):
        names += [f"tau[{c}][{int(k)}]" for k in data.cohorts[data.tau_active[i]]]
    for i, c in enumerate(data.countries):
        names += [f"taut[{c}][{int(k)}]" for k in data.cohorts[data.taut_active[i]]]
    for c in data.countries:
        names += [f"{p}[{c}]" for p in THETA_NAMES]
    names += [f"sigma2_l[{c}]" for c in data.countries]
    names += [f"mu_beta[{x}]" for x in ASSAF_AGES[1:]]
    names += [f"sigma2_beta[{x}]" for x in ASSAF_AGES[1:]]
    names += list(GLOBAL_SCALARS)
    return names


def fit_assaf_bhm(surface, config, sex=Sex.MALE, countries=None, priors=None, workers=1):
    """Fit the age-cohort model to one sex of an ASSAF surface."""
    data = AssafData.from_surface(surface, sex, countries)
    model = AssafModel(data, priors)
    draws = run_chain(model, config, workers=workers)
    draws.meta = {**model.meta(), "sex": Sex.parse(sex).value}
    return draws


# ------------------------------------------------------------ draw access

class DrawArrays:
    """Posterior draws reshaped to model arrays (draw axis first)."""

    def __init__(self, draws):
        meta = draws.meta
        self.countries = list(meta["countries"])
        self.cohorts = np.asarray(meta["cohorts"])
        self.tau_active = np.asarray(meta["tau_active"], dtype=bool)
        self.taut_active = np.asarray(meta["taut_active"], dtype=bool)
        self.periods = np.asarray(meta["periods"])
        self.sex = meta.get("sex", "male")
        L, C = len(self.countries), self.cohorts.size
        n = draws.n_draws
        X = draws.draws
        pos = 0
        self.xi = X[:, pos : pos + L * N_AGES].reshape(n, L, N_AGES)
        pos += L * N_AGES
        self.tau = np.full((n, L, C), np.nan)
        k = int(self.tau_active.sum())
        self.tau[:, self.tau_active] = X[:, pos : pos + k]
        pos += k
        self.taut = np.full((n, L, C), np.nan)
        k = int(self.taut_active.sum())
        self.taut[:, self.taut_active] = X[:, pos : pos + k]
        pos += k
        self.theta = X[:, pos : pos + 6 * L].reshape(n, L, 6)
        pos += 6 * L
        self.s2l = X[:, pos : pos + L]
        pos += L
        self.n = n
        self.sigma2_tau = draws.column("sigma2_tau")

    def curve(self, cohorts, shifted=False):
        """``g(c)`` for every draw and country: shape (n, L, len(cohorts))."""
        th = self.theta
        d4 = th[..., 3] + (th[..., 5] if shifted else 0.0)
        return double_logistic_cohort(
            np.asarray(cohorts)[None, None, :], th[..., 0:1], th[..., 1:2], th[..., 2:3], d4[..., None], th[..., 4:5]
        )


def _cohort_effects(arr, cohorts, rows, noise_rng=None):
    """Cohort effects on an extended cohort axis for the draw subset ``rows``.

    Estimated effects are reused where the cohort was in-sample; other
    cohorts take the curve value, plus cohort-level noise if ``noise_rng``
    is given.
    """
    lo = min(int(cohorts[0]), int(arr.cohorts[0]))
    hi = max(int(cohorts[-1]), int(arr.cohorts[-1]))
    axis = np.arange(lo, hi + 1, 5)
    out = []
    for est, active, shifted in ((arr.tau, arr.tau_active, False), (arr.taut, arr.taut_active, True)):
        g = arr.curve(axis, shifted)[rows]
        if noise_rng is not None:
            sd = np.sqrt(arr.sigma2_tau[rows])[:, None, None]
            g = g + sd * noise_rng.standard_normal(g.shape)
        off = (int(arr.cohorts[0]) - lo) // 5
        sl = slice(off, off + arr.cohorts.size)
        use = np.broadcast_to(active[None], (len(rows),) + active.shape)
        g[:, :, sl] = np.where(use, est[rows], g[:, :, sl])
        out.append(g)
    return axis, out[0], out[1]


def _core_for_periods(arr, periods, rows, rng=None, level1_noise=False):
    periods = np.asarray(periods)
    ages = np.asarray(ASSAF_AGES)
    cohorts_needed = (periods[:, None] - ages[None, :]).ravel()
    axis, tau, taut = _cohort_effects(arr, np.array([cohorts_needed.min(), cohorts_needed.max()]), rows, rng)
    idx = (periods[:, None] - ages[None, :] - axis[0]) // 5  # (P, 9)
    xi = arr.xi[rows]  # (n, L, 9)
    eff = tau[:, :, idx]  # (n, L, P, 9)
    eff[..., -1] = taut[:, :, idx[:, -1]]
    core = xi[:, :, None, :] * eff
    if level1_noise:
        sd = np.sqrt(arr.s2l[rows])[:, :, None, None]
        core = core + sd * rng.standard_normal(core.shape)
    return core


@dataclass
class AssafForecast:
    """Forecast ASSAF draws on the full age grid: values (draw, country, period, age)."""

    countries: list
    periods: np.ndarray
    values: np.ndarray
    grid: tuple = DEFAULT_GRID
    sex: str = "male"
    clamped: bool = True

    def country(self, name):
        return self.values[:, self.countries.index(name)]

    def to_frame(self):
        n, L, P, A = self.values.shape
        idx = np.indices((n, L, P, A)).reshape(4, -1)
        return pd.DataFrame(
            {
                "draw": idx[0],
                "country": np.asarray(self.countries)[idx[1]],
                "sex": self.sex,
                "period_start": self.periods[idx[2]] - 3,
                "age_lower": np.array([g.lower for g in self.grid])[idx[3]],
                "y": self.values.ravel(),
            }
        )

    def save(self, path):
        from pathlib import Path

        path = Path(path)
        if path.suffix == ".npz":
            np.savez_compressed(path, values=self.values, periods=self.periods, countries=np.array(self.countries), sex=np.array(self.sex))
        else:
            self.to_frame().to_csv(path, index=False)

    @classmethod
    def load(cls, path, grid=DEFAULT_GRID):
        from pathlib import Path

        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path) as z:
                return cls(list(z["countries"]), z["periods"], z["values"], grid, str(z["sex"]))
        frame = pd.read_csv(path)
        countries = sorted(frame["country"].unique())
        periods = np.sort(frame["period_start"].unique()) + 3
        draws = np.sort(frame["draw"].unique())
        lowers = [g.lower for g in grid]
        values = np.zeros((draws.size, len(countries), periods.size, len(grid)))
        ci = frame["country"].map({c: i for i, c in enumerate(countries)}).to_numpy()
        pi = np.searchsorted(periods, frame["period_start"].to_numpy() + 3)
        ai = frame["age_lower"].map({a: i for i, a in enumerate(lowers)}).to_numpy()
        values[frame["draw"].to_numpy(), ci, pi, ai] = frame["y"].to_numpy()
        sex = str(frame["sex"].iloc[0]) if "sex" in frame else "male"
        return cls(countries, periods, values, grid, sex)


def forecast_assaf(draws, horizon=FORECAST_LABELS, rng=None, grid=DEFAULT_GRID, clamp=True):
    """Posterior predictive ASSAF for future periods.

    Cohorts already in-sample keep their estimated effect; new cohorts draw
    from the country curve with cohort noise; Level-1 noise is then added
    and values are clamped to ``[0, 0.99]``.
    """
    rng = make_rng(0 if rng is None else rng)
    arr = DrawArrays(draws)
    rows = np.arange(arr.n)
    core = _core_for_periods(arr, horizon, rows, rng=rng, level1_noise=True)
    values = expand_core(core, grid)
    if clamp:
        values = np.clip(values, 0.0, Y_MAX)
    return AssafForecast(arr.countries, np.asarray(horizon), values, grid, arr.sex, clamp)


def mean_sample_indices(n_draws, count):
    if count > n_draws:
        raise CountExceedsDraws(f"asked for {count} samples from {n_draws} draws")
    return np.arange(count) * n_draws // count


def posterior_assaf_mean_samples(draws, count=30, periods=None, grid=DEFAULT_GRID):
    """Equally spaced posterior draws of the Level-1 mean ASSAF surface.

    Each sample covers the estimation periods followed by the forecast
    periods; cohorts outside the fitted data take their curve value, so every
    sample is a deterministic function of its draw.  Values are clamped to
    ``[0, 0.99]`` so each sample is a valid :class:`AssafSurface`.
    """
    arr = DrawArrays(draws)
    if periods is None:
        periods = np.concatenate([arr.periods, np.array(FORECAST_LABELS)])
    periods = np.asarray(periods)
    rows = mean_sample_indices(arr.n, count)
    core = _core_for_periods(arr, periods, rows)
    full = np.clip(expand_core(core, grid), 0.0, Y_MAX)
    sex = Sex.parse(arr.sex)
    out = []
    for s in range(len(rows)):
        slices = {(c, sex): Slice(periods.copy(), full[s, i].copy()) for i, c in enumerate(arr.countries)}
        out.append(AssafSurface(grid, slices))
    return out


def effect_summaries(draws, probs=(0.025, 0.5, 0.975)):
    """Per-country medians and 95% intervals of age and cohort effects."""
    arr = DrawArrays(draws)
    rows = []
    for i, c in enumerate(arr.countries):
        for j, x in enumerate(ASSAF_AGES):
            q = np.quantile(arr.xi[:, i, j], probs)
            rows.append((c, "age", x, *q))
        for kind, est, active in (("cohort", arr.tau, arr.tau_active), ("cohort80", arr.taut, arr.taut_active)):
            for j in np.flatnonzero(active[i]):
                q = np.quantile(est[:, i, j], probs)
                rows.append((c, kind, int(arr.cohorts[j]), *q))
    return pd.DataFrame(rows, columns=["country", "effect", "index", "lower95", "median", "upper95"])
