"""Forecast trajectory containers and quantile summaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import Sex, start_year
from .errors import ShapeMismatch, TooFewDraws

DEFAULT_PROBS = (0.025, 0.1, 0.5, 0.9, 0.975)


@dataclass
class TrajectorySet:
    """Forecast draws of one quantity: ``values[draw, country, period]``."""

    countries: list
    periods: np.ndarray
    values: np.ndarray
    sex: str = "male"
    quantity: str = "e0"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.countries = list(self.countries)
        self.periods = np.asarray(self.periods, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[1:] != (len(self.countries), self.periods.size):
            raise ShapeMismatch(f"values shape {self.values.shape} does not match countries x periods")
        self.sex = Sex.parse(self.sex).value

    @property
    def n_draws(self):
        return self.values.shape[0]

    def country(self, name):
        return self.values[:, self.countries.index(name), :]

    def restrict_countries(self, countries):
        idx = [self.countries.index(c) for c in countries]
        return TrajectorySet(list(countries), self.periods, self.values[:, idx], self.sex, self.quantity, dict(self.meta))

    def restrict_periods(self, periods):
        keep = np.isin(self.periods, list(periods))
        return TrajectorySet(self.countries, self.periods[keep], self.values[:, :, keep], self.sex, self.quantity, dict(self.meta))

    @classmethod
    def pool(cls, sets):
        """Stack draws of aligned trajectory sets (equal weight per draw)."""
        first = sets[0]
        for s in sets[1:]:
            if s.countries != first.countries or not np.array_equal(s.periods, first.periods):
                raise ShapeMismatch("cannot pool trajectory sets over different countries/periods")
        values = np.concatenate([s.values for s in sets], axis=0)
        return cls(first.countries, first.periods, values, first.sex, first.quantity, dict(first.meta))

    def to_frame(self):
        n, L, P = self.values.shape
        idx = np.indices((n, L, P)).reshape(3, -1)
        return pd.DataFrame(
            {
                "draw": idx[0],
                "country": np.asarray(self.countries, dtype=object)[idx[1]],
                "sex": self.sex,
                "period_start": self.periods[idx[2]] - 3,
                self.quantity: self.values.ravel(),
            }
        )

    def save(self, path):
        path = Path(path)
        if path.suffix == ".npz":
            np.savez_compressed(
                path,
                values=self.values,
                periods=self.periods,
                countries=np.array(self.countries),
                sex=np.array(self.sex),
                quantity=np.array(self.quantity),
            )
        else:
            self.to_frame().to_csv(path, index=False)
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path) as z:
                return cls(list(z["countries"]), z["periods"], z["values"], str(z["sex"]), str(z["quantity"]))
        frame = pd.read_csv(path)
        quantity = [c for c in frame.columns if c not in ("draw", "country", "sex", "period_start")][0]
        countries = sorted(frame["country"].astype(str).unique())
        periods = np.sort(frame["period_start"].unique()) + 3
        draws = np.sort(frame["draw"].unique())
        values = np.full((draws.size, len(countries), periods.size), np.nan)
        ci = frame["country"].astype(str).map({c: i for i, c in enumerate(countries)}).to_numpy()
        pi = np.searchsorted(periods, frame["period_start"].to_numpy() + 3)
        values[np.searchsorted(draws, frame["draw"].to_numpy()), ci, pi] = frame[quantity].to_numpy()
        sex = str(frame["sex"].iloc[0]) if "sex" in frame else "male"
        return cls(countries, periods, values, sex, quantity)


def quantile_summary(traj, probs=DEFAULT_PROBS, min_draws=100):
    """Empirical quantiles (linear interpolation, R type 7) for every cell."""
    if traj.n_draws < min_draws:
        raise TooFewDraws(f"{traj.n_draws} draws per cell; need at least {min_draws}")
    q = np.quantile(traj.values, probs, axis=0)  # (len(probs), L, P)
    rows = []
    for i, c in enumerate(traj.countries):
        for j, p in enumerate(traj.periods):
            rows.append((c, traj.sex, int(start_year(p)), int(p), *q[:, i, j]))
    cols = ["country", "sex", "period_start", "period", *[f"q{p:g}" for p in probs]]
    return pd.DataFrame(rows, columns=cols)
