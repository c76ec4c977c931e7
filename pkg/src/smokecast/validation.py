"""Out-of-sample validation: hold out recent periods and score forecasts.

Scores follow the usual protocol: mean absolute error of posterior
medians, empirical coverage of central 80% and 95% intervals, and the
median interval half-width, per method and sex.  A plain Lee-Carter
forecaster (random walk with drift on ``k_t``, all-cause rates) serves as
the baseline.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from .config import DataPaths, RunConfig
from .data import Sex, write_e0_series, write_surface
from .errors import EmptySlice, TestDataMissing
from .mcmc import make_rng
from .reconstruct import lee_carter_fit, lee_carter_rwd_forecast

SPLITS = {2000: 2000, 2010: 2010}
LEVELS = (0.8, 0.95)
METRIC_COLUMNS = ["method", "sex", "n_cells", "mae", "coverage80", "coverage95", "halfwidth80", "halfwidth95"]


def mae(median, observed):
    """Mean absolute error over all country-periods."""
    median, observed = np.asarray(median, float), np.asarray(observed, float)
    return float(np.mean(np.abs(median - observed)))


def coverage(lower, upper, observed):
    observed = np.asarray(observed, float)
    return float(np.mean((np.asarray(lower) <= observed) & (observed <= np.asarray(upper))))


def median_halfwidth(lower, upper):
    return float(np.median((np.asarray(upper, float) - np.asarray(lower, float)) / 2.0))


def score_draws(draws, observed):
    """Metrics for forecast draws ``(n, cells)`` against ``observed`` (cells,)."""
    draws = np.asarray(draws, float)
    out = {"n_cells": int(np.size(observed)), "mae": mae(np.median(draws, axis=0), observed)}
    for level in LEVELS:
        lo, hi = np.quantile(draws, [(1 - level) / 2, (1 + level) / 2], axis=0)
        tag = int(round(level * 100))
        out[f"coverage{tag}"] = coverage(lo, hi, observed)
        out[f"halfwidth{tag}"] = median_halfwidth(lo, hi)
    return out


def split_periods(periods, split):
    """Training labels (start year < split) and test labels (the rest)."""
    periods = np.asarray(sorted(set(int(p) for p in periods)))
    start = periods - 3
    return periods[start < split], periods[start >= split]


def _observed_panel(e0, sex, countries, periods):
    """Observed e0 ``(countries, periods)``; NaN where absent."""
    out = np.full((len(countries), len(periods)), np.nan)
    for i, c in enumerate(countries):
        try:
            p, v = e0.get(c, sex)
        except EmptySlice:
            continue
        lookup = dict(zip(p.tolist(), v))
        out[i] = [lookup.get(int(t), np.nan) for t in periods]
    return out


def baseline_forecast(mortality, sex, countries, train, test, n_draws=1000, seed=0):
    """Lee-Carter random-walk-with-drift e0 draws ``(n, countries, periods)``."""
    rng = make_rng(seed)
    out = np.empty((n_draws, len(countries), len(test)))
    for i, c in enumerate(countries):
        sl = mortality.get(c, sex).restrict(train)
        params = lee_carter_fit(sl.values, sl.periods)
        steps = [(int(t) - int(sl.periods[-1])) // 5 for t in test]
        horizon = np.arange(1, max(steps) + 1)
        e0 = lee_carter_rwd_forecast(params, horizon, n_draws, rng, mortality.grid, sex)
        out[:, i, :] = e0[:, np.asarray(steps) - 1]
    return out


def out_of_sample_validate(config: RunConfig, split=2000, methods=("smokecast", "lee_carter"), n_baseline=1000):
    """Fit on periods before ``split``, forecast the held-out periods and score.

    Returns ``(metrics, inclusion)``: a metrics frame with one row per
    method and sex and a per-country table of test cells used.
    """
    from .pipeline import _load_inputs, run_full_pipeline

    split = SPLITS.get(split, split)
    root = Path(config.output_dir).resolve() / f"validate_{split}"
    full = replace(config, output=str(root / "full-data"))
    run_full_pipeline(full, stop_after="data")
    mort, assaf, e0 = _load_inputs(root / "full-data")
    countries = mort.countries(Sex.MALE)
    all_periods = mort.get(countries[0], Sex.MALE).periods
    train, test = split_periods(all_periods, split)
    if test.size == 0:
        raise TestDataMissing(f"no observed periods at or after {split}")
    obs = {sex: _observed_panel(e0, sex, countries, test) for sex in (Sex.MALE, Sex.FEMALE)}
    if all(np.all(np.isnan(v)) for v in obs.values()):
        raise TestDataMissing(f"no observed e0 for test periods {test.tolist()}")

    train_dir = root / "train-data"
    train_dir.mkdir(parents=True, exist_ok=True)
    write_surface(mort.restrict_periods(train), train_dir / "mortality.csv")
    write_surface(assaf.restrict_periods(train), train_dir / "assaf.csv")
    write_e0_series(e0.restrict_periods(train), train_dir / "e0.csv")
    paths = DataPaths(str(train_dir / "mortality.csv"), str(train_dir / "assaf.csv"), str(train_dir / "e0.csv"))
    run_cfg = replace(config, output=str(root / "run"), data=paths, horizon=int(test.size))

    rows = []
    forecasts = {}
    if "smokecast" in methods:
        bundle = run_full_pipeline(run_cfg)
        for sex, traj in ((Sex.MALE, bundle.male), (Sex.FEMALE, bundle.female)):
            forecasts[("smokecast", sex)] = traj.restrict_countries(countries).values
    if "lee_carter" in methods:
        for k, sex in enumerate((Sex.MALE, Sex.FEMALE)):
            forecasts[("lee_carter", sex)] = baseline_forecast(mort, sex, countries, train, test, n_baseline, seed=config.seed + k)
    inclusion = []
    for (method, sex), draws in forecasts.items():
        o = obs[sex]
        keep = np.isfinite(o)
        rows.append({"method": method, "sex": sex.value, **score_draws(draws[:, keep], o[keep])})
        for i, c in enumerate(countries):
            inclusion.append((method, sex.value, c, int(keep[i].sum())))
    metrics = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    inclusion = pd.DataFrame(inclusion, columns=["method", "sex", "country", "test_cells"])
    metrics.to_csv(root / "metrics.csv", index=False)
    inclusion.to_csv(root / "inclusion.csv", index=False)
    return metrics, inclusion


__all__ = [
    "baseline_forecast",
    "coverage",
    "mae",
    "median_halfwidth",
    "out_of_sample_validate",
    "score_draws",
    "split_periods",
]
