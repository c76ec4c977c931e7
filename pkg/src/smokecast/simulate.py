"""Synthetic data generated from the model equations, with a truth record.

ASSAF surfaces come from the age-cohort model (age effect times a cohort
effect scattered around a double-logistic curve), non-smoking e0 follows the
gain random walk, and all-cause rates are built by matching a Lee-Carter
schedule to each non-smoking e0 and adding smoking mortality back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .assaf import THETA_NAMES, double_logistic_cohort
from .data import (
    ASSAF_AGES,
    DEFAULT_GRID,
    E0Series,
    MortalitySurface,
    Sex,
    Slice,
    assaf_surface_from_core,
    expand_core,
)
from .e0ns import LOWER, PARAM_NAMES, UPPER, gain_curve
from .errors import InvalidTruth
from .lifetable import Y_MAX, allcause_from_nonsmoking, e0_from_rates
from .mcmc import make_rng, sample_truncated_normal
from .reconstruct import LeeCarterParams, rates_for_target_e0

SEXES = (Sex.MALE, Sex.FEMALE)


def base_schedule(sex=Sex.MALE, grid=DEFAULT_GRID):
    """Lee-Carter ``(a_x, b_x)`` for a stylized non-smoking schedule."""
    mid = np.array([g.lower + (2.5 if g.width is None else g.width / 2) for g in grid], dtype=float)
    m = 0.0004 + 0.00004 * np.exp(0.09 * mid)
    m[0], m[1] = 0.04, 0.004
    if Sex.parse(sex) == Sex.FEMALE:
        m = 0.7 * m
    b = np.where(mid < 15, 2.0, np.where(mid < 80, 1.0, 0.5))
    return np.log(m), b / b.sum()


@dataclass
class SexTruth:
    """Model parameters for one sex; arrays carry a leading country axis."""

    theta: np.ndarray  # (L, 6): D1, D2, D3, D4, k, delta
    xi: np.ndarray  # (L, 9), first column 1
    sigma2_l: np.ndarray  # (L,)
    sigma2_tau: float
    zeta: np.ndarray  # (L, 7): a1..a4, w, z, omega
    e0ns_start: np.ndarray  # (L,)


@dataclass
class SyntheticTruth:
    countries: list
    sexes: dict  # Sex -> SexTruth
    extra: dict = field(default_factory=dict)

    def validate(self):
        L = len(self.countries)
        if L == 0:
            raise InvalidTruth("truth needs at least one country")
        for sex, t in self.sexes.items():
            shapes = {"theta": (L, 6), "xi": (L, 9), "sigma2_l": (L,), "zeta": (L, 7), "e0ns_start": (L,)}
            for name, shape in shapes.items():
                arr = np.asarray(getattr(t, name), dtype=float)
                if arr.shape != shape:
                    raise InvalidTruth(f"{sex.value} {name}: expected shape {shape}, got {arr.shape}")
                if not np.all(np.isfinite(arr)):
                    raise InvalidTruth(f"{sex.value} {name} has non-finite entries")
            if np.any(np.asarray(t.sigma2_l) < 0) or t.sigma2_tau < 0:
                raise InvalidTruth("variances must be nonnegative")
            if np.any(np.asarray(t.xi)[:, 0] != 1.0):
                raise InvalidTruth("age effect at 40 is fixed at 1")
            th = np.asarray(t.theta)
            if np.any(th[:, [0, 2]] <= 0) or np.any(th[:, 3] <= 0) or np.any(th[:, 4] < 0):
                raise InvalidTruth("D1, D3, D4 must be positive and k nonnegative")
            z = np.asarray(t.zeta)
            if np.any(z < LOWER) or np.any(z > UPPER):
                raise InvalidTruth("gain parameters outside their truncation bounds")
            if np.any(np.asarray(t.e0ns_start) < 20) or np.any(np.asarray(t.e0ns_start) > 100):
                raise InvalidTruth("starting e0ns must lie in [20, 100]")
        return self

    def to_dict(self):
        out = {"countries": list(self.countries), "extra": self.extra}
        for sex, t in self.sexes.items():
            out[sex.value] = {
                "theta": np.asarray(t.theta).tolist(),
                "xi": np.asarray(t.xi).tolist(),
                "sigma2_l": np.asarray(t.sigma2_l).tolist(),
                "sigma2_tau": float(t.sigma2_tau),
                "zeta": np.asarray(t.zeta).tolist(),
                "e0ns_start": np.asarray(t.e0ns_start).tolist(),
            }
        return out

    @classmethod
    def from_dict(cls, d):
        try:
            sexes = {}
            for sex in SEXES:
                if sex.value not in d:
                    continue
                s = d[sex.value]
                sexes[sex] = SexTruth(
                    np.asarray(s["theta"], float),
                    np.asarray(s["xi"], float),
                    np.asarray(s["sigma2_l"], float),
                    float(s["sigma2_tau"]),
                    np.asarray(s["zeta"], float),
                    np.asarray(s["e0ns_start"], float),
                )
            truth = cls(list(d["countries"]), sexes, d.get("extra", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidTruth(f"malformed truth record: {exc}") from None
        return truth.validate()

    def parameter_table(self):
        """Long frame of (sex, country, parameter, value) for recovery scoring."""
        import pandas as pd

        rows = []
        for sex, t in self.sexes.items():
            for i, c in enumerate(self.countries):
                for j, x in enumerate(ASSAF_AGES):
                    rows.append((sex.value, c, f"xi[{c}][{x}]", t.xi[i, j]))
                for j, n in enumerate(THETA_NAMES):
                    rows.append((sex.value, c, f"{n}[{c}]", t.theta[i, j]))
                for j, n in enumerate(PARAM_NAMES):
                    rows.append((sex.value, c, f"{n}[{c}]", t.zeta[i, j]))
        return pd.DataFrame(rows, columns=["sex", "country", "parameter", "value"])


def random_truth(n_countries=5, seed=0, sigma_l=0.02, sigma_tau=0.02, omega=(0.3, 0.8)):
    """Plausible parameter values for ``n_countries`` countries of both sexes."""
    rng = make_rng(seed)
    L = n_countries
    countries = [f"S{i:02d}" for i in range(L)]
    sexes = {}
    for sex in SEXES:
        female = sex == Sex.FEMALE
        theta = np.column_stack(
            [
                rng.gamma(20, 0.15 / 20, L),
                rng.normal(45 if female else 35, 5, L),
                rng.gamma(20, 0.1 / 20, L),
                rng.normal(45, 5, L),
                rng.normal(0.25 if female else 0.5, 0.05, L),
                rng.normal(-10, 3, L),
            ]
        )
        theta[:, 4] = np.maximum(theta[:, 4], 0.05)
        base = np.array([1.1, 1.2, 1.2, 1.1, 1.0, 0.9, 0.8, 0.7])
        xi = np.column_stack([np.ones(L), base + 0.05 * rng.standard_normal((L, 8))])
        zeta = _draw_zeta(rng, L)
        start = rng.uniform(66, 72, L) if female else rng.uniform(60, 67, L)
        sexes[sex] = SexTruth(theta, xi, np.full(L, sigma_l**2), sigma_tau**2, np.column_stack([zeta, rng.uniform(*omega, L)]), start)
    return SyntheticTruth(countries, sexes, {"seed": seed}).validate()


def _draw_zeta(rng, L):
    specs = ((15.77, 9.0), (40.97, 25.0), (0.21, 4.0), (19.82, 9.0), (2.93, 0.25), (0.4, 0.01))
    return np.column_stack([sample_truncated_normal(m, v, LOWER[j], UPPER[j], rng, size=L) for j, (m, v) in enumerate(specs)])


def simulate_synthetic(truth, n_periods=13, first_period=1953, seed=0, grid=DEFAULT_GRID, sexes=SEXES):
    """Generate ASSAF, mortality and e0 panels from ``truth``.

    Returns ``(assaf, mortality, e0, record)``: an AssafSurface, a
    MortalitySurface, an E0Series of all-cause e0 and a dict truth record
    holding the realized cohort effects, the unclipped Level-1 ASSAF and the
    simulated non-smoking e0.  Observed ASSAF is clipped to ``[0, 0.99]``.
    """
    if not isinstance(truth, SyntheticTruth):
        truth = SyntheticTruth.from_dict(truth)
    truth.validate()
    if n_periods < 4:
        raise InvalidTruth("need at least four periods")
    rng = make_rng(seed)
    periods = first_period + 5 * np.arange(n_periods)
    oldest = int(periods[0] - ASSAF_AGES[-1])
    cohorts = np.arange(oldest, int(periods[-1] - ASSAF_AGES[0]) + 1, 5)
    ages = np.array(ASSAF_AGES)
    cohort_idx = (periods[:, None] - ages[None, :] - oldest) // 5  # (T, 9)
    cores, mort, e0 = {}, {}, {}
    record = {"truth": truth.to_dict(), "periods": periods.tolist(), "cohorts": cohorts.tolist(), "seed": seed}
    for sex in sexes:
        sex = Sex.parse(sex)
        t = truth.sexes[sex]
        a_x, b_x = base_schedule(sex, grid)
        lc = LeeCarterParams(a_x, b_x, np.zeros(1))
        rec = record.setdefault(sex.value, {"tau": {}, "taut": {}, "assaf_raw": {}, "e0ns": {}})
        for i, c in enumerate(truth.countries):
            th = t.theta[i]
            sd_tau = np.sqrt(t.sigma2_tau)
            tau = double_logistic_cohort(cohorts, *th[:5]) + sd_tau * rng.standard_normal(cohorts.size)
            taut = double_logistic_cohort(cohorts, th[0], th[1], th[2], th[3] + th[5], th[4]) + sd_tau * rng.standard_normal(cohorts.size)
            effect = tau[cohort_idx]
            effect[:, -1] = taut[cohort_idx[:, -1]]
            raw = t.xi[i][None, :] * effect + np.sqrt(t.sigma2_l[i]) * rng.standard_normal((n_periods, len(ages)))
            core = np.clip(raw, 0.0, Y_MAX)
            cores[(c, sex)] = (periods, core)
            # non-smoking e0 random walk
            z = t.zeta[i]
            ens = np.empty(n_periods)
            ens[0] = t.e0ns_start[i]
            for p in range(1, n_periods):
                ens[p] = ens[p - 1] + gain_curve(ens[p - 1], *z[:6]) + z[6] * rng.standard_normal()
            ens = np.clip(ens, 20.0, 105.0)
            dns = rates_for_target_e0(lc, ens, grid, sex, k_start=0.0)
            d = allcause_from_nonsmoking(dns, expand_core(core, grid))
            mort[(c, sex)] = Slice(periods.copy(), d)
            e0[(c, sex)] = (periods.copy(), e0_from_rates(d, grid, sex=sex))
            rec["tau"][c] = tau.tolist()
            rec["taut"][c] = taut.tolist()
            rec["assaf_raw"][c] = raw.tolist()
            rec["e0ns"][c] = ens.tolist()
    return assaf_surface_from_core(cores, grid), MortalitySurface(grid, mort), E0Series(e0), record


def save_record(record, path):
    with open(path, "w") as fh:
        json.dump(record, fh, indent=1)


__all__ = ["SexTruth", "SyntheticTruth", "base_schedule", "random_truth", "save_record", "simulate_synthetic"]
