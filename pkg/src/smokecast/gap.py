"""Female-minus-male life expectancy gap regression and female e0 forecasts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np
import pandas as pd

from .errors import CollinearDesign, DataError, MissingAnchor, ShapeMismatch
from .mcmc import make_rng
from .trajectories import TrajectorySet

ANCHOR_PERIOD = 1953
COEF_NAMES = ("intercept", "e0_m_anchor", "gap_prev", "e0_m", "hinge", "h")
PANEL_COLUMNS = ("country", "period", "gap", "e0_m_anchor", "e0_m", "gap_prev", "h")


@dataclass
class GapCoefficients:
    beta: np.ndarray
    sigma: float
    hinge: float = 61.0
    lower: float = 0.03
    upper: float = 13.35
    override_above: float = 81.0
    override_value: float = 20.0
    se: np.ndarray | None = None
    r_squared: float | None = None
    n_obs: int | None = None
    condition_number: float | None = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.se is not None:
            self.se = np.asarray(self.se, dtype=float)
        if self.beta.shape != (6,):
            raise ShapeMismatch("gap model needs six coefficients")
        if not self.lower < self.upper:
            raise ValueError("gap bounds need lower < upper")
        if not self.sigma > 0:
            raise ValueError("residual SD must be positive")

    @classmethod
    def table1(cls):
        """Published estimates shipped with the package."""
        text = resources.files("smokecast.resources").joinpath("table1.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        d = asdict(self)
        d["beta"] = self.beta.tolist()
        d["se"] = None if self.se is None else self.se.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        keys = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in keys})

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def hinge_term(self, e0_m):
        e0_m = np.asarray(e0_m, dtype=float)
        return np.where(e0_m > self.override_above, self.override_value, np.maximum(e0_m - self.hinge, 0.0))

    def predictor(self, e0_m_anchor, gap_prev, e0_m, h):
        """Linear predictor of the untruncated gap, with the high-e0 override."""
        b = self.beta
        return b[0] + b[1] * e0_m_anchor + b[2] * gap_prev + b[3] * e0_m + b[4] * self.hinge_term(e0_m) + b[5] * h


def design_matrix(panel, hinge=61.0):
    """Regressors (1, anchor, lagged gap, e0_m, (e0_m - hinge)+, h) for a panel frame."""
    e0 = panel["e0_m"].to_numpy(float)
    return np.column_stack(
        [
            np.ones(len(panel)),
            panel["e0_m_anchor"].to_numpy(float),
            panel["gap_prev"].to_numpy(float),
            e0,
            np.maximum(e0 - hinge, 0.0),
            panel["h"].to_numpy(float),
        ]
    )


def fit_gap_model(panel, hinge=61.0, min_obs=30):
    """Ordinary least squares fit of the gap regression.

    ``panel`` is a frame with :data:`PANEL_COLUMNS`.  Bounds are the observed
    minimum and maximum gap.  Raises :class:`CollinearDesign` when a
    regressor is constant or the design is numerically singular.
    """
    panel = pd.DataFrame(panel)
    if len(panel) < min_obs:
        raise DataError(f"gap fit needs >= {min_obs} observations; got {len(panel)}")
    X = design_matrix(panel, hinge)
    y = panel["gap"].to_numpy(float)
    cond = float(np.linalg.cond(X))
    flat = [COEF_NAMES[j] for j in range(1, X.shape[1]) if np.ptp(X[:, j]) == 0]
    if flat or not np.isfinite(cond) or cond > 1e12:
        what = f"constant regressor(s) {flat}" if flat else "near-singular design"
        raise CollinearDesign(f"{what}; condition number {cond:.3g}", condition_number=cond)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = len(y) - X.shape[1]
    s2 = resid @ resid / dof
    se = np.sqrt(np.diag(s2 * np.linalg.inv(X.T @ X)))
    r2 = 1.0 - (resid @ resid) / np.sum((y - y.mean()) ** 2)
    return GapCoefficients(
        beta, float(np.sqrt(s2)), hinge, float(y.min()), float(y.max()),
        se=se, r_squared=float(r2), n_obs=len(y), condition_number=cond,
    )


def fit_report(coef):
    rows = {"estimate": coef.beta}
    if coef.se is not None:
        rows["se"] = coef.se
    return pd.DataFrame(rows, index=list(COEF_NAMES))


def build_gap_panel(male_e0, female_e0, asaf_gap=None, anchor_period=ANCHOR_PERIOD):
    """Assemble regression rows from observed male and female e0.

    ``male_e0``/``female_e0`` map country to ``(periods, values)``;
    ``asaf_gap`` maps country to ``(periods, male ASAF - female ASAF)``.
    A row needs the current and previous period of both sexes.
    """
    rows = []
    for c, (pm, em) in male_e0.items():
        if c not in female_e0:
            continue
        pf, ef = female_e0[c]
        female = dict(zip(np.asarray(pf).tolist(), np.asarray(ef, dtype=float)))
        male = dict(zip(np.asarray(pm).tolist(), np.asarray(em, dtype=float)))
        if anchor_period not in male:
            continue
        h = {}
        if asaf_gap is not None and c in asaf_gap:
            h = dict(zip(np.asarray(asaf_gap[c][0]).tolist(), np.asarray(asaf_gap[c][1], dtype=float)))
        for p in sorted(male):
            prev = p - 5
            if p not in female or prev not in female or prev not in male:
                continue
            if asaf_gap is not None and p not in h:
                continue
            rows.append((c, p, female[p] - male[p], male[anchor_period], male[p], female[prev] - male[prev], h.get(p, 0.0)))
    return pd.DataFrame(rows, columns=list(PANEL_COLUMNS))


def forecast_gap(coef, male_traj, h_forecast, last_gap, anchor, rng=None):
    """Simulate truncated gaps along each male e0 trajectory.

    ``h_forecast`` maps country to an array of ASAF gaps over the forecast
    periods, ``last_gap`` to the last observed gap and ``anchor`` to the
    1953 male e0.  Each period's gap feeds the next period's lag.
    """
    rng = make_rng(0 if rng is None else rng)
    n, L, P = male_traj.values.shape
    out = np.empty_like(male_traj.values)
    for i, c in enumerate(male_traj.countries):
        if c not in anchor or not np.isfinite(anchor[c]):
            raise MissingAnchor(f"no {ANCHOR_PERIOD} male e0 for {c}")
        h = np.asarray(h_forecast[c], dtype=float)
        if h.shape != (P,):
            raise ShapeMismatch(f"{c}: ASAF gap series needs {P} periods, got {h.shape}")
        g = np.full(n, float(last_gap[c]))
        for t in range(P):
            mean = coef.predictor(anchor[c], g, male_traj.values[:, i, t], h[t])
            g = np.clip(mean + coef.sigma * rng.standard_normal(n), coef.lower, coef.upper)
            out[:, i, t] = g
    return TrajectorySet(male_traj.countries, male_traj.periods, out, "female", "gap", dict(male_traj.meta))


def female_e0_from_gap(male_traj, gap_traj):
    if male_traj.values.shape != gap_traj.values.shape:
        raise ShapeMismatch("male and gap trajectories must be paired draw by draw")
    values = male_traj.values + gap_traj.values
    return TrajectorySet(male_traj.countries, male_traj.periods, values, "female", "e0", dict(male_traj.meta))


def simulate_gap_panel(coef, n_countries=60, n_periods=12, rng=None, h_scale=0.1):
    """Panel drawn from the gap regression itself (truncation included).

    Male e0 paths stay below the override threshold, as in historical data.
    """
    rng = make_rng(0 if rng is None else rng)
    rows = []
    for i in range(n_countries):
        e0 = rng.uniform(45, 70)
        anchor = e0
        g = rng.uniform(2, 8)
        h = rng.uniform(0, h_scale)
        slope = rng.uniform(0.3, (coef.override_above - 1 - e0) / n_periods)
        for t in range(n_periods):
            prev_g = g
            e0 = min(e0 + slope + rng.normal(0, 0.5), coef.override_above)
            h = np.clip(h + rng.normal(0, h_scale / 4), -0.05, 0.5)
            mean = coef.predictor(anchor, prev_g, e0, h)
            g = float(np.clip(mean + coef.sigma * rng.standard_normal(), coef.lower, coef.upper))
            rows.append((f"G{i:03d}", ANCHOR_PERIOD + 5 * (t + 1), g, anchor, e0, prev_g, h))
    return pd.DataFrame(rows, columns=list(PANEL_COLUMNS))


__all__ = [
    "GapCoefficients",
    "build_gap_panel",
    "design_matrix",
    "female_e0_from_gap",
    "fit_gap_model",
    "fit_report",
    "forecast_gap",
    "simulate_gap_panel",
]
