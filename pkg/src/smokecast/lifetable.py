"""Abridged period life tables and the smoking adjustment of death rates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DEFAULT_GRID, Sex
from .errors import (
    AttributionAtUnity,
    EmptySlice,
    NonFiniteRate,
    OpenGroupZeroRate,
    OutOfRangeFraction,
    ShapeMismatch,
    ZeroTotalMortality,
)

RADIX = 100_000.0
Y_MAX = 0.99

# Coale-Demeny separation factors for the first two age groups:
# (threshold on m0, a0 above, a0 intercept, a0 slope, 4a1 above, 4a1 intercept, 4a1 slope)
_COALE_DEMENY = {
    Sex.MALE: (0.107, 0.330, 0.045, 2.684, 1.352, 1.651, -2.816),
    Sex.FEMALE: (0.107, 0.350, 0.053, 2.800, 1.361, 1.522, -1.518),
}


@dataclass(frozen=True)
class LifeTable:
    ages: np.ndarray
    n: np.ndarray
    mx: np.ndarray
    ax: np.ndarray
    qx: np.ndarray
    lx: np.ndarray
    dx: np.ndarray
    Lx: np.ndarray
    Tx: np.ndarray
    ex: np.ndarray

    @property
    def e0(self):
        return float(self.ex[0])

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame(
            {
                "age_lower": self.ages,
                "n": self.n,
                "mx": self.mx,
                "ax": self.ax,
                "qx": self.qx,
                "lx": self.lx,
                "dx": self.dx,
                "Lx": self.Lx,
                "Tx": self.Tx,
                "ex": self.ex,
            }
        )


def _widths(grid):
    return np.array([np.inf if g.is_open else float(g.width) for g in grid])


def default_ax(mx, grid, sex=Sex.MALE):
    """Separation factors: n/2 for closed groups, Coale-Demeny for 0 and 1-4.

    ``mx`` may carry leading batch axes; the open group is left at ``1/m``.
    """
    mx = np.asarray(mx, dtype=float)
    n = _widths(grid)
    ax = np.broadcast_to(np.where(np.isinf(n), 0.0, n / 2.0), mx.shape).copy()
    ax[..., -1] = 1.0 / mx[..., -1]
    lowers = [g.lower for g in grid]
    if len(grid) > 2 and lowers[0] == 0 and grid[0].width == 1 and lowers[1] == 1 and grid[1].width == 4:
        thr, a0_hi, a0_c, a0_s, a1_hi, a1_c, a1_s = _COALE_DEMENY[Sex.parse(sex)]
        m0 = mx[..., 0]
        ax[..., 0] = np.where(m0 >= thr, a0_hi, a0_c + a0_s * m0)
        ax[..., 1] = np.where(m0 >= thr, a1_hi, a1_c + a1_s * m0)
    return ax


def _check_rates(mx):
    if not np.all(np.isfinite(mx)) or np.any(mx < 0):
        raise NonFiniteRate("death rates must be finite and nonnegative")
    if np.any(mx[..., -1] <= 0):
        raise OpenGroupZeroRate("open age group needs a positive death rate")


def e0_from_rates(mx, grid=DEFAULT_GRID, ax=None, sex=Sex.MALE, check=True):
    """Vectorized life expectancy at birth; leading axes of ``mx`` are batch axes."""
    mx = np.asarray(mx, dtype=float)
    if check:
        _check_rates(mx)
    n = _widths(grid)
    if ax is None:
        ax = default_ax(mx, grid, sex)
    nc, ac, mc = n[:-1], ax[..., :-1], mx[..., :-1]
    qc = np.clip(nc * mc / (1.0 + (nc - ac) * mc), 0.0, 1.0)
    surv = np.cumprod(1.0 - qc, axis=-1)
    lx = np.concatenate([np.ones(mx.shape[:-1] + (1,)), surv], axis=-1)
    Lc = nc * lx[..., 1:] + ac * (lx[..., :-1] - lx[..., 1:])
    return Lc.sum(axis=-1) + lx[..., -1] / mx[..., -1]


def life_table(mx, grid=DEFAULT_GRID, ax=None, sex=Sex.MALE, radix=RADIX):
    """Full abridged period life table for one rate vector."""
    mx = np.asarray(mx, dtype=float)
    if mx.shape != (len(grid),):
        raise ShapeMismatch(f"expected {len(grid)} rates, got shape {mx.shape}")
    _check_rates(mx)
    n = _widths(grid)
    ax = default_ax(mx, grid, sex) if ax is None else np.asarray(ax, dtype=float).copy()
    ax[-1] = 1.0 / mx[-1]
    qx = np.ones_like(mx)
    closed = ~np.isinf(n)
    qx[closed] = np.clip(n[closed] * mx[closed] / (1.0 + (n[closed] - ax[closed]) * mx[closed]), 0.0, 1.0)
    lx = radix * np.concatenate([[1.0], np.cumprod(1.0 - qx[:-1])])
    dx = lx * qx
    Lx = np.empty_like(mx)
    Lx[closed] = n[closed] * (lx[closed] - dx[closed]) + ax[closed] * dx[closed]
    Lx[-1] = lx[-1] / mx[-1]
    Tx = np.cumsum(Lx[::-1])[::-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        ex = np.where(lx > 0, Tx / lx, 0.0)
    ages = np.array([g.lower for g in grid])
    return LifeTable(ages, n, mx, ax, qx, lx, dx, Lx, Tx, ex)


def life_table_e0(mx, grid=DEFAULT_GRID, ax=None, sex=Sex.MALE):
    """Return ``(e0, LifeTable)`` for a full-grid rate vector."""
    table = life_table(mx, grid, ax=ax, sex=sex)
    return table.e0, table


# ----------------------------------------------------- smoking adjustment

def _aligned(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} do not align") from None
    if a.shape[-1:] != b.shape[-1:]:
        raise ShapeMismatch(f"age axes differ: {a.shape} vs {b.shape}")
    return a, b


def nonsmoking_rates(d, y):
    """Remove the smoking-attributable part of death rates: ``(1 - y) * d``."""
    d, y = _aligned(d, y)
    if np.any(y < 0) or np.any(y >= 1):
        raise OutOfRangeFraction("ASSAF must lie in [0, 1)")
    return (1.0 - y) * d


def clamp_assaf(y, y_max=Y_MAX):
    return np.clip(np.asarray(y, dtype=float), 0.0, y_max)


def allcause_from_nonsmoking(dns, y):
    """Inverse of :func:`nonsmoking_rates`: ``dns / (1 - y)``."""
    dns, y = _aligned(dns, y)
    if np.any(y >= 1):
        raise AttributionAtUnity("ASSAF >= 1 makes the inversion singular; clamp first")
    if np.any(y < 0):
        raise OutOfRangeFraction("ASSAF must be nonnegative")
    return dns / (1.0 - y)


def asaf_from_assaf(y, m):
    """All-age SAF: the death-rate weighted mean of ASSAF over the age axis."""
    y, m = _aligned(y, m)
    total = m.sum(axis=-1)
    if np.any(total <= 0):
        raise ZeroTotalMortality("total mortality must be positive")
    out = (y * m).sum(axis=-1) / total
    return float(out) if np.ndim(out) == 0 else out


def e0ns_series(mort_slice, assaf_slice, grid=DEFAULT_GRID, sex=Sex.MALE):
    """Non-smoking e0 per period for one country.

    Both arguments are :class:`~smokecast.data.Slice` objects; every ASSAF
    period must also be present in the mortality slice.  Returns
    ``(periods, e0ns)``.
    """
    periods = assaf_slice.periods
    if periods.size == 0:
        raise EmptySlice("no ASSAF periods")
    missing = np.setdiff1d(periods, mort_slice.periods)
    if missing.size:
        raise ShapeMismatch(f"mortality lacks periods {missing.tolist()}")
    d = np.stack([mort_slice.at(p) for p in periods])
    dns = nonsmoking_rates(d, assaf_slice.values)
    return periods.copy(), e0_from_rates(dns, grid, sex=sex)


def e0ns_from_surfaces(mortality, assaf, sex=Sex.MALE, countries=None):
    """Non-smoking e0 for every country present in both surfaces."""
    from .data import E0Series

    sex = Sex.parse(sex)
    if countries is None:
        countries = sorted(set(mortality.countries(sex)) & set(assaf.countries(sex)))
    out = {}
    for c in countries:
        out[(c, sex)] = e0ns_series(mortality.get(c, sex), assaf.get(c, sex), mortality.grid, sex)
    return E0Series(out)


def asaf_series(mort_slice, assaf_slice):
    """Observed ASAF per ASSAF period for one country: ``(periods, asaf)``."""
    periods = assaf_slice.periods
    d = np.stack([mort_slice.at(p) for p in periods])
    return periods.copy(), asaf_from_assaf(assaf_slice.values, d)


__all__ = [
    "LifeTable",
    "RADIX",
    "Y_MAX",
    "allcause_from_nonsmoking",
    "asaf_from_assaf",
    "asaf_series",
    "clamp_assaf",
    "default_ax",
    "e0_from_rates",
    "e0ns_from_surfaces",
    "e0ns_series",
    "life_table",
    "life_table_e0",
    "nonsmoking_rates",
]
