"""Lee-Carter fits on non-smoking rates and reconstruction of all-cause e0.

Forecast non-smoking e0 draws are mapped back to rate schedules by solving
for the Lee-Carter period index that reproduces each target, smoking
mortality is added back with the forecast ASSAF, and e0 is recomputed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import DEFAULT_GRID, Sex
from .errors import BracketFailure, RankDeficient, ShapeMismatch
from .lifetable import allcause_from_nonsmoking, e0_from_rates
from .mcmc import make_rng
from .trajectories import TrajectorySet

log = logging.getLogger(__name__)

RATE_FLOOR = 1e-6
K_LIMIT = 200.0
E0_TOL = 1e-6
TARGET_RANGE = (20.0, 110.0)


@dataclass
class LeeCarterParams:
    ax: np.ndarray
    bx: np.ndarray
    kt: np.ndarray
    periods: np.ndarray | None = None
    rmse: float = 0.0  # reconstruction error of the log-rate matrix

    def log_rates(self, k):
        k = np.asarray(k, dtype=float)
        return self.ax + self.bx * k[..., None]

    def rates(self, k):
        return np.exp(self.log_rates(k))

    def with_bx(self, bx):
        """Refit ``k`` by least squares under a replacement age response."""
        bx = np.asarray(bx, dtype=float)
        centered = self.log_rates(self.kt) - self.ax
        kt = centered @ bx / (bx @ bx)
        return LeeCarterParams(self.ax, bx, kt - kt.mean(), self.periods, self.rmse)

    def to_dict(self):
        return {
            "ax": self.ax.tolist(),
            "bx": self.bx.tolist(),
            "kt": self.kt.tolist(),
            "periods": None if self.periods is None else np.asarray(self.periods).tolist(),
            "rmse": self.rmse,
        }

    @classmethod
    def from_dict(cls, d):
        periods = None if d.get("periods") is None else np.asarray(d["periods"])
        return cls(np.asarray(d["ax"]), np.asarray(d["bx"]), np.asarray(d["kt"]), periods, d.get("rmse", 0.0))


def lee_carter_fit(rates, periods=None, min_periods=5):
    """Rank-one fit of a ``(periods, ages)`` rate matrix.

    ``a_x`` is the mean log rate; ``(b_x, k_t)`` is the leading singular pair
    of the centred log rates, scaled so that ``sum(b) = 1`` (which also gives
    ``sum(k) = 0``).
    """
    m = np.asarray(rates, dtype=float)
    if m.ndim != 2 or m.shape[0] < min_periods:
        raise ShapeMismatch(f"need a (periods >= {min_periods}, ages) matrix; got {m.shape}")
    if np.any(m < RATE_FLOOR):
        log.warning("flooring %d rates at %g before taking logs", int(np.sum(m < RATE_FLOOR)), RATE_FLOOR)
        m = np.maximum(m, RATE_FLOOR)
    logm = np.log(m)
    ax = logm.mean(axis=0)
    centered = logm - ax
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    scale = np.abs(logm).max() + 1.0
    total = vt[0].sum()
    if s[0] <= 1e-10 * scale or abs(total) <= 1e-10:
        raise RankDeficient("log-rate matrix has no time variation to decompose")
    bx = vt[0] / total
    kt = u[:, 0] * s[0] * total
    resid = centered - np.outer(kt, bx)
    return LeeCarterParams(ax, bx, kt, None if periods is None else np.asarray(periods), float(np.sqrt(np.mean(resid**2))))


def fit_lee_carter_panel(rates_by_country, coherence="shared-bx"):
    """Per-country fits, optionally sharing one age response across countries.

    ``rates_by_country`` maps country to ``(periods, matrix)``.  With
    ``coherence="shared-bx"`` every country uses the renormalized mean of
    the country ``b_x`` and its ``k_t`` is refitted against it.
    """
    fits = {c: lee_carter_fit(m, periods=p) for c, (p, m) in rates_by_country.items()}
    if coherence in (None, "none"):
        return fits
    if coherence != "shared-bx":
        raise ValueError(f"unknown coherence option {coherence!r}")
    shared = np.mean([f.bx for f in fits.values()], axis=0)
    shared = shared / shared.sum()
    return {c: f.with_bx(shared) for c, f in fits.items()}


# ------------------------------------------------------------ k for a target

def _e0_of_k(params, k, grid, sex):
    return e0_from_rates(params.rates(k), grid, sex=sex, check=False)


def rates_for_target_e0(params, target_e0, grid=DEFAULT_GRID, sex=Sex.MALE, tol=E0_TOL, k_start=None, return_k=False):
    """Rates ``exp(a + b k)`` whose life expectancy equals ``target_e0``.

    Vectorized over targets.  The bracket starts at ``k_start +/- 10`` (last
    fitted ``k`` by default) and doubles until it straddles the target or
    leaves ``[-200, 200]``; bisection then runs to ``|e0 - target| < tol``.
    """
    target = np.asarray(target_e0, dtype=float)
    if np.any(~np.isfinite(target)) or np.any(target < TARGET_RANGE[0]) or np.any(target > TARGET_RANGE[1]):
        raise BracketFailure("targets must lie within [20, 110] years")
    t = target.ravel()
    k0 = float(params.kt[-1]) if k_start is None else float(k_start)
    f = lambda k: _e0_of_k(params, k, grid, sex) - t
    width = np.full(t.shape, 10.0)
    lo, hi = k0 - width, k0 + width
    flo, fhi = f(lo), f(hi)
    bad = np.sign(flo) == np.sign(fhi)
    while np.any(bad):
        width = np.where(bad, 2 * width, width)
        lo = np.where(bad, np.maximum(k0 - width, -K_LIMIT), lo)
        hi = np.where(bad, np.minimum(k0 + width, K_LIMIT), hi)
        flo, fhi = f(lo), f(hi)
        newbad = np.sign(flo) == np.sign(fhi)
        stuck = newbad & (lo <= -K_LIMIT) & (hi >= K_LIMIT)
        if np.any(stuck):
            raise BracketFailure(f"target e0 {t[stuck][0]:.4f} unreachable for k in [-{K_LIMIT:g}, {K_LIMIT:g}]")
        bad = newbad
    exact_lo, exact_hi = flo == 0, fhi == 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        left = np.sign(fm) == np.sign(flo)
        lo, flo = np.where(left, mid, lo), np.where(left, fm, flo)
        hi, fhi = np.where(left, hi, mid), np.where(left, fhi, fm)
        if np.all((np.minimum(np.abs(flo), np.abs(fhi)) < tol * 1e-2) | (hi - lo < 1e-13 * (1 + np.abs(lo)))):
            break
    k = np.where(np.abs(flo) <= np.abs(fhi), lo, hi)
    k = np.where(exact_lo, lo, np.where(exact_hi, hi, k))
    resid = np.abs(f(k))
    if np.any(resid >= tol):
        raise BracketFailure(f"bisection stalled at |e0 error| = {resid.max():.3g}")
    k = k.reshape(target.shape)
    rates = params.rates(k)
    return (rates, k) if return_k else rates


# ------------------------------------------------------------ reconstruction

def reconstruct_male_e0(e0ns_traj, assaf, params, grid=DEFAULT_GRID, sex=Sex.MALE):
    """All-cause e0 trajectories from paired e0ns and ASSAF draws.

    ``assaf`` is an :class:`~smokecast.assaf.AssafForecast` (or an array
    ``(draw, country, period, age)``) over the same countries and periods;
    a single ASSAF draw is shared by every e0ns draw.  ``params`` maps
    country to :class:`LeeCarterParams`.  The rare e0ns draws outside
    ``[20, 110]`` are clipped into that range with a warning; the count is
    kept in ``meta["clipped_targets"]``.
    """
    y = np.asarray(getattr(assaf, "values", assaf), dtype=float)
    countries = getattr(assaf, "countries", e0ns_traj.countries)
    idx = [list(countries).index(c) for c in e0ns_traj.countries]
    y = y[:, idx]
    if hasattr(assaf, "periods"):
        pidx = [list(np.asarray(assaf.periods)).index(p) for p in e0ns_traj.periods]
        y = y[:, :, pidx]
    n = e0ns_traj.n_draws
    if y.shape[0] not in (1, n) or y.shape[1:3] != e0ns_traj.values.shape[1:]:
        raise ShapeMismatch(f"ASSAF draws {y.shape} cannot pair with e0ns draws {e0ns_traj.values.shape}")
    out = np.empty_like(e0ns_traj.values)
    outside = (e0ns_traj.values < TARGET_RANGE[0]) | (e0ns_traj.values > TARGET_RANGE[1])
    if np.any(outside):
        log.warning("clipping %d of %d e0ns draws into [%g, %g]", int(outside.sum()), outside.size, *TARGET_RANGE)
    for i, c in enumerate(e0ns_traj.countries):
        target = np.clip(e0ns_traj.values[:, i, :], *TARGET_RANGE)
        dns = rates_for_target_e0(params[c], target, grid, sex)
        d = allcause_from_nonsmoking(dns, np.broadcast_to(y[:, i], dns.shape))
        out[:, i, :] = e0_from_rates(d, grid, sex=sex, check=False)
    meta = {**e0ns_traj.meta, "clipped_targets": int(outside.sum())}
    return TrajectorySet(e0ns_traj.countries, e0ns_traj.periods, out, e0ns_traj.sex, "e0", meta)


# ------------------------------------------------------------ baseline

def lee_carter_rwd_forecast(params, horizon_periods, n_draws=1000, rng=None, grid=DEFAULT_GRID, sex=Sex.MALE):
    """Plain Lee-Carter e0 forecast with a random walk with drift on ``k``.

    Drift uncertainty enters through its standard error; returns an array
    ``(draw, period)``.
    """
    rng = make_rng(0 if rng is None else rng)
    dk = np.diff(params.kt)
    drift = dk.mean()
    sd = dk.std(ddof=1) if dk.size > 1 else 0.0
    H = len(horizon_periods)
    steps = np.arange(1, H + 1)
    drift_draw = drift + sd / np.sqrt(max(dk.size, 1)) * rng.standard_normal((n_draws, 1))
    noise = np.cumsum(sd * rng.standard_normal((n_draws, H)), axis=1)
    k = params.kt[-1] + drift_draw * steps + noise
    return e0_from_rates(np.exp(params.ax + params.bx * k[..., None]), grid, sex=sex, check=False)


__all__ = [
    "LeeCarterParams",
    "fit_lee_carter_panel",
    "lee_carter_fit",
    "lee_carter_rwd_forecast",
    "rates_for_target_e0",
    "reconstruct_male_e0",
]
