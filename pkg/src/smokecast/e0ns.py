"""Hierarchical random-walk model for non-smoking life expectancy.

Five-year gains follow a double-logistic function of the current level
plus heteroscedastic noise ``omega * phi(e)``, where ``phi`` is a regression
spline fitted to absolute residuals of a constant-variance first pass.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.interpolate import BSpline, make_lsq_spline
from scipy.special import expit, log_ndtr, ndtr

from .data import Sex
from .errors import EmptySlice, InsufficientSpread
from .mcmc import Block, BlockAdapter, invgamma_logpdf, make_rng, normal_logpdf, run_chain
from .trajectories import TrajectorySet

PARAM_NAMES = ("a1", "a2", "a3", "a4", "w", "z", "omega")
LOWER = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
UPPER = np.array([100.0, 100.0, 100.0, 100.0, 15.0, 1.15, 10.0])
SPLINE_FLOOR = 0.01
PAIRS_PER_COEF = 10  # fewer residual pairs than this per spline coefficient drops interior knots


def gain_curve(e0ns, a1, a2, a3, a4, w, z):
    """Expected five-year gain at level ``e0ns``.

    A zero width (``a2`` or ``a4``) turns the matching logistic into a step
    at its centre.  All arguments broadcast.
    """
    e = np.asarray(e0ns, dtype=float)
    return w * _logistic(e - a1 - 0.5 * a2, a2) + (z - w) * _logistic(e - a1 - a2 - a3 - 0.5 * a4, a4)


def _logistic(x, width):
    width = np.asarray(width, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        smooth = expit(4.4 * x / width)
    step = np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5))
    return np.where(width > 0, smooth, step)


# --------------------------------------------------------- variance spline

@dataclass(frozen=True)
class VarianceSpline:
    knots: np.ndarray
    coefficients: np.ndarray
    lower: float
    upper: float  # clamp point: largest fitted e0ns
    degree: int = 3
    floor: float = SPLINE_FLOOR

    def __call__(self, e):
        if self.is_constant:
            return np.full(np.shape(e), max(float(self.coefficients[0]), self.floor))
        e = np.clip(np.asarray(e, dtype=float), self.lower, self.upper)
        spline = BSpline(np.asarray(self.knots), np.asarray(self.coefficients), self.degree, extrapolate=False)
        return np.maximum(spline(e), self.floor)

    @classmethod
    def constant(cls, value=1.0):
        return cls(np.array([0.0] * 4 + [1.0] * 4), np.full(4, value), -np.inf, np.inf, 3, SPLINE_FLOOR)

    @property
    def is_constant(self):
        return not np.isfinite(self.lower)

    def __reduce__(self):
        return (VarianceSpline, (np.asarray(self.knots), np.asarray(self.coefficients), self.lower, self.upper, self.degree, self.floor))

    def to_dict(self):
        return {
            "knots": np.asarray(self.knots).tolist(),
            "coefficients": np.asarray(self.coefficients).tolist(),
            "lower": self.lower if np.isfinite(self.lower) else None,
            "upper": self.upper if np.isfinite(self.upper) else None,
            "degree": self.degree,
            "floor": self.floor,
        }

    @classmethod
    def from_dict(cls, d):
        lower = -np.inf if d["lower"] is None else d["lower"]
        upper = np.inf if d["upper"] is None else d["upper"]
        return cls(np.array(d["knots"]), np.array(d["coefficients"]), lower, upper, d["degree"], d["floor"])

    def to_frame(self):
        import pandas as pd

        n = max(len(self.knots), len(self.coefficients))
        pad = lambda a: list(a) + [None] * (n - len(a))
        return pd.DataFrame({"knot": pad(self.knots), "coefficient": pad(self.coefficients)})


def fit_variance_spline(e0ns, abs_resid, n_knots=5, floor=SPLINE_FLOOR, min_pairs=20, min_span=10.0):
    """Least-squares cubic regression spline of absolute residuals on level.

    Interior knots sit at ``n_knots`` equally spaced quantiles of ``e0ns``.
    Small samples get fewer knots (at least ``PAIRS_PER_COEF`` pairs per
    coefficient) so the fit does not chase noise near the data edges.
    """
    x = np.asarray(e0ns, dtype=float)
    y = np.asarray(abs_resid, dtype=float)
    if x.size < min_pairs or np.ptp(x) <= min_span:
        raise InsufficientSpread(f"need >= {min_pairs} pairs spanning > {min_span} years; got {x.size} spanning {np.ptp(x):.2f}")
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    lo, hi = float(x[0]), float(x[-1])
    n_knots = int(min(n_knots, max(0, x.size // PAIRS_PER_COEF - 4)))
    interior = np.quantile(x, np.arange(1, n_knots + 1) / (n_knots + 1))
    interior = np.unique(np.clip(interior, lo + 1e-9, hi - 1e-9))
    knots = np.concatenate([[lo] * 4, interior, [hi] * 4])
    try:
        spline = make_lsq_spline(x, y, knots, k=3)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise InsufficientSpread(f"spline fit failed: {exc}") from None
    return VarianceSpline(spline.t, spline.c, lo, hi, 3, floor)


# ------------------------------------------------------------------ priors

@dataclass(frozen=True)
class E0nsPriors:
    """Level-3 constants: normal (mean, variance) and inverse-Gamma (shape, scale)."""

    mu_a1: tuple = (15.77, 15.6**2)
    mu_a2: tuple = (40.97, 23.5**2)
    mu_a3: tuple = (0.21, 14.5**2)
    mu_a4: tuple = (19.82, 14.7**2)
    mu_w: tuple = (2.93, 3.5**2)
    mu_z: tuple = (0.40, 0.6**2)
    sigma2_a1: tuple = (2.0, 15.6**2)
    sigma2_a2: tuple = (2.0, 14.5**2)
    sigma2_a3: tuple = (2.0, 14.7**2)
    sigma2_a4: tuple = (2.0, 3.5**2)
    sigma2_w: tuple = (2.0, 0.6**2)
    sigma2_z: tuple = (2.0, 0.6**2)

    def mean_prior(self):
        rows = [self.mu_a1, self.mu_a2, self.mu_a3, self.mu_a4, self.mu_w, self.mu_z]
        return np.array(rows, dtype=float).T  # (2, 6): means, variances

    def var_prior(self):
        rows = [self.sigma2_a1, self.sigma2_a2, self.sigma2_a3, self.sigma2_a4, self.sigma2_w, self.sigma2_z]
        return np.array(rows, dtype=float).T  # (2, 6): shapes, scales


HYPER_NAMES = ("a1", "a2", "a3", "a4", "w", "z")


def _trunc_log_mass(mu, var, lo, hi):
    """log P(lo <= N(mu, var) <= hi)."""
    sd = np.sqrt(var)
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    # upper-tail form keeps precision when both bounds sit far above the mean
    return np.where(a > 0, np.log(np.maximum(ndtr(-a) - ndtr(-b), 1e-300)), np.log(np.maximum(ndtr(b) - ndtr(a), 1e-300)))


# ------------------------------------------------------------------- data

class E0nsData:
    def __init__(self, countries, series):
        self.countries = list(countries)
        T = max(len(s) for s in series)
        L = len(series)
        self.prev = np.zeros((L, T - 1))
        self.next = np.zeros((L, T - 1))
        self.mask = np.zeros((L, T - 1), dtype=bool)
        for i, s in enumerate(series):
            s = np.asarray(s, dtype=float)
            self.prev[i, : s.size - 1] = s[:-1]
            self.next[i, : s.size - 1] = s[1:]
            self.mask[i, : s.size - 1] = True
        self.last = np.array([np.asarray(s, dtype=float)[-1] for s in series])

    @classmethod
    def from_series(cls, series, sex=Sex.MALE, countries=None, min_periods=4):
        sex = Sex.parse(sex)
        countries = countries or series.countries(sex)
        if not countries:
            raise EmptySlice(f"no {sex.value} e0ns series")
        values = []
        last_period = None
        for c in countries:
            periods, v = series.get(c, sex)
            if periods.size < min_periods or np.any(np.diff(periods) != 5):
                raise EmptySlice(f"{c} needs >= {min_periods} consecutive periods", key=(c, sex.value))
            values.append(v)
            last_period = int(periods[-1]) if last_period is None else max(last_period, int(periods[-1]))
        data = cls(countries, values)
        data.last_period = last_period
        return data


# ------------------------------------------------------------------ model

def _init_params(data, priors, phi):
    means = priors.mean_prior()[0]
    base = np.clip(means, LOWER[:6] + 0.05, UPPER[:6] - 0.05)
    zeta = np.tile(base, (len(data.countries), 1))
    resid = data.next - data.prev - gain_curve(data.prev, *zeta.T[:, :, None])
    scale = np.where(data.mask, phi(data.prev), 1.0)
    sd = np.sqrt((np.where(data.mask, resid / scale, 0.0) ** 2).sum(1) / np.maximum(data.mask.sum(1), 1))
    omega = np.clip(sd, 0.05, 9.0)
    return np.column_stack([zeta, omega])


class CountryBlock(Block):
    name = "country"

    def __init__(self, data, phi_prev):
        self.data = data
        self.phi_prev = phi_prev
        init = np.array([1.0, 1.0, 1.0, 1.0, 0.2, 0.03, 0.05])
        self.adapter = BlockAdapter(init, batch_shape=(len(data.countries),), covariance=True)

    def update(self, state, rng, adapting):
        d = self.data
        mu, s2 = state["mu"], state["sigma2"]

        def log_target(p):
            zeta = p[:, :6]
            mean = d.prev + gain_curve(d.prev, *(zeta[:, i : i + 1] for i in range(6)))
            sd = p[:, 6:7] * self.phi_prev
            with np.errstate(divide="ignore", invalid="ignore"):
                ll = np.where(d.mask, normal_logpdf(d.next, mean, sd**2), 0.0).sum(axis=1)
            lp = (-0.5 * (zeta - mu) ** 2 / s2).sum(axis=1)
            return np.where(p[:, 6] > 0, ll + lp, -np.inf)

        new, accepted, _ = self.adapter.step(state["params"], log_target, (LOWER, UPPER), rng)
        state["params"] = new
        return int(np.sum(accepted)), accepted.size


class HyperBlock(Block):
    """Means (or variances) of the six truncated-normal country priors, as a batch of scalars."""

    def __init__(self, which, priors, n_countries):
        self.which = which
        self.name = f"hyper_{which}"
        self.priors = priors
        init = np.array([[2.0], [2.0], [2.0], [2.0], [0.3], [0.05]])
        if which == "sigma2":
            init = np.array([[20.0], [20.0], [20.0], [5.0], [0.2], [0.02]])
        self.adapter = BlockAdapter(init, batch_shape=(6,))
        self.lo, self.hi = LOWER[:6], UPPER[:6]

    def update(self, state, rng, adapting):
        zeta = state["params"][:, :6]
        if self.which == "mu":
            s2 = state["sigma2"]
            pm, pv = self.priors.mean_prior()

            def log_target(mu):
                mu = mu[:, 0]
                ll = (-0.5 * (zeta - mu) ** 2 / s2).sum(axis=0) - zeta.shape[0] * _trunc_log_mass(mu, s2, self.lo, self.hi)
                return ll + normal_logpdf(mu, pm, pv)

            current = state["mu"][:, None]
            bounds = (np.full(1, -np.inf), np.full(1, np.inf))
        else:
            mu = state["mu"]
            shape, scale = self.priors.var_prior()

            def log_target(s2):
                s2 = s2[:, 0]
                with np.errstate(divide="ignore", invalid="ignore"):
                    ll = (normal_logpdf(zeta, mu, s2)).sum(axis=0) - zeta.shape[0] * _trunc_log_mass(mu, s2, self.lo, self.hi)
                return np.where(s2 > 0, ll + invgamma_logpdf(s2, shape, scale), -np.inf)

            current = state["sigma2"][:, None]
            bounds = (np.zeros(1), np.full(1, np.inf))
        new, accepted, _ = self.adapter.step(current, log_target, bounds, rng)
        state["mu" if self.which == "mu" else "sigma2"] = new[:, 0]
        return int(np.sum(accepted)), 6


class E0nsModel:
    def __init__(self, data, phi=None, priors=None):
        self.data = data
        self.phi = phi or VarianceSpline.constant()
        self.priors = priors or E0nsPriors()
        self.phi_prev = np.where(data.mask, self.phi(data.prev), 1.0)
        self.param_names = [f"{p}[{c}]" for c in data.countries for p in PARAM_NAMES]
        self.param_names += [f"mu_{h}" for h in HYPER_NAMES] + [f"sigma2_{h}" for h in HYPER_NAMES]

    def initialize(self, rng):
        return {
            "params": _init_params(self.data, self.priors, self.phi),
            "mu": self.priors.mean_prior()[0].copy(),
            "sigma2": self.priors.var_prior()[1].copy(),
        }

    def make_blocks(self):
        L = len(self.data.countries)
        return [CountryBlock(self.data, self.phi_prev), HyperBlock("mu", self.priors, L), HyperBlock("sigma2", self.priors, L)]

    def flatten(self, state):
        return np.concatenate([state["params"].ravel(), state["mu"], state["sigma2"]])


def _country_params(draws, countries):
    cols = [f"{p}[{c}]" for c in countries for p in PARAM_NAMES]
    return draws.columns(cols).reshape(draws.n_draws, len(countries), len(PARAM_NAMES))


def absolute_residuals(draws, data):
    """Posterior-median absolute residual of every observed gain."""
    params = _country_params(draws, data.countries)
    zeta = params[..., :6]
    fitted = gain_curve(data.prev[None], *(zeta[..., i : i + 1] for i in range(6)))
    resid = np.median(data.next[None] - data.prev[None] - fitted, axis=0)
    return data.prev[data.mask], np.abs(resid[data.mask])


def fit_e0ns_bhm(series, config, sex=Sex.MALE, countries=None, priors=None, stage1_config=None, n_knots=5, workers=1):
    """Two-stage fit: constant variance first, then the spline-scaled model.

    ``series`` is an :class:`~smokecast.data.E0Series` of non-smoking e0.
    The returned draws carry the fitted spline, the jump-off values and the
    residual pairs in ``meta``.
    """
    data = E0nsData.from_series(series, sex, countries)
    priors = priors or E0nsPriors()
    stage1_config = stage1_config or config
    stage1 = run_chain(E0nsModel(data, None, priors), stage1_config, workers=workers)
    x, r = absolute_residuals(stage1, data)
    phi = fit_variance_spline(x, r, n_knots=n_knots)
    seed2 = int(np.random.SeedSequence(config.seed).generate_state(1)[0])
    draws = run_chain(E0nsModel(data, phi, priors), replace(config, seed=seed2), workers=workers)
    draws.meta = {
        "model": "e0ns",
        "sex": Sex.parse(sex).value,
        "countries": data.countries,
        "jumpoff": data.last.tolist(),
        "last_period": int(data.last_period),
        "spline": phi.to_dict(),
        "residual_pairs": [x.tolist(), r.tolist()],
        "priors": asdict(priors),
    }
    return draws


def forecast_e0ns(draws, jumpoff=None, horizon=9, rng=None, first_period=None):
    """Posterior predictive trajectories of e0ns.

    Each draw iterates ``e <- e + gain(e) + omega * phi(e) * N(0, 1)`` from
    the jump-off value, with ``phi`` held at its value at the largest
    fitted level beyond the data range.
    """
    rng = make_rng(0 if rng is None else rng)
    meta = draws.meta
    countries = list(meta["countries"])
    phi = VarianceSpline.from_dict(meta["spline"]) if "spline" in meta else VarianceSpline.constant()
    jumpoff = np.asarray(meta["jumpoff"] if jumpoff is None else jumpoff, dtype=float)
    if first_period is None:
        first_period = int(meta.get("last_period", 2013)) + 5
    params = _country_params(draws, countries)
    zeta, omega = params[..., :6], params[..., 6]
    n, L = omega.shape
    out = np.empty((n, L, horizon))
    e = np.broadcast_to(jumpoff, (n, L)).astype(float)
    for h in range(horizon):
        e = e + gain_curve(e, *(zeta[..., i] for i in range(6))) + omega * phi(e) * rng.standard_normal((n, L))
        out[:, :, h] = e
    periods = first_period + 5 * np.arange(horizon)
    return TrajectorySet(countries, periods, out, meta.get("sex", "male"), "e0ns")
