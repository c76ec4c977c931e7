"""End-to-end forecasting run with persisted, resumable stages.

Stages, each reading only the artifacts written by earlier ones:

``data``     canonical input files (or synthetic data and its truth record)
``assaf``    ASSAF fits for both sexes, mean-surface samples, ASAF gaps
``e0ns``     per sample: non-smoking e0 series, two-stage fit, forecasts
``male``     per sample: Lee-Carter reconstruction of all-cause male e0
``female``   gap model forecasts and female e0
``summary``  quantile tables

A manifest records the config hash, every derived seed and sha256
checksums of each stage's outputs; a rerun with the same config skips
stages whose outputs are intact.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .assaf import AssafForecast, fit_assaf_bhm, forecast_assaf, posterior_assaf_mean_samples
from .config import RunConfig
from .data import (
    E0Series,
    Sex,
    load_assaf_surface,
    load_e0_series,
    load_mortality_surface,
    normalize_period,
    write_e0_series,
    write_surface,
)
from .e0ns import VarianceSpline, fit_e0ns_bhm, forecast_e0ns
from .errors import EmptySlice, MissingAnchor, SmokecastError, StageError
from .gap import ANCHOR_PERIOD, GapCoefficients, build_gap_panel, female_e0_from_gap, fit_gap_model, forecast_gap
from .lifetable import asaf_from_assaf, e0_from_rates, e0ns_from_surfaces
from .reconstruct import fit_lee_carter_panel, reconstruct_male_e0
from .simulate import SyntheticTruth, random_truth, save_record, simulate_synthetic
from .trajectories import DEFAULT_PROBS, TrajectorySet, quantile_summary

log = logging.getLogger(__name__)

STAGES = ("data", "assaf", "e0ns", "male", "female", "summary")
_STAGE_CODES = {name: i for i, name in enumerate(STAGES)}


def derive_seed(base, stage, index=0):
    """Stable 32-bit seed for ``(stage, index)`` under the run seed."""
    return int(np.random.SeedSequence([int(base), _STAGE_CODES[stage], int(index)]).generate_state(1)[0])


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class ForecastBundle:
    male: TrajectorySet
    female: TrajectorySet
    quantiles: pd.DataFrame
    output_dir: Path
    manifest: dict


# ------------------------------------------------------------------ manifest

class Manifest:
    def __init__(self, path, config):
        self.path = Path(path)
        self.config_hash = config.config_hash()
        self.data = {"config_hash": self.config_hash, "seed": config.seed, "config": config.to_dict(), "stages": {}}
        if self.path.exists():
            old = json.loads(self.path.read_text())
            if old.get("config_hash") == self.config_hash:
                self.data["stages"] = old.get("stages", {})

    def complete(self, stage, root):
        entry = self.data["stages"].get(stage)
        if not entry:
            return False
        for rel, digest in entry["outputs"].items():
            p = root / rel
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def record(self, stage, root, outputs, seeds):
        self.data["stages"][stage] = {
            "outputs": {str(Path(p).relative_to(root)): sha256_file(p) for p in outputs},
            "seeds": seeds,
        }
        self.write()

    def invalidate_from(self, stage):
        for s in STAGES[STAGES.index(stage):]:
            self.data["stages"].pop(s, None)

    def write(self):
        self.path.write_text(json.dumps(self.data, indent=1, sort_keys=True))


# ------------------------------------------------------------------ stages

def _stage_data(cfg, root):
    out = root / "data"
    out.mkdir(parents=True, exist_ok=True)
    seeds = {}
    files = [out / "mortality.csv", out / "assaf.csv", out / "e0.csv"]
    if cfg.uses_files:
        mort = load_mortality_surface(cfg.resolve(cfg.data.mortality))
        assaf = load_assaf_surface(cfg.resolve(cfg.data.assaf))
        if cfg.data.e0:
            e0 = load_e0_series(cfg.resolve(cfg.data.e0))
        else:
            e0 = observed_e0(mort)
    else:
        syn = cfg.synthetic
        if syn.truth:
            with open(cfg.resolve(syn.truth)) as fh:
                truth = SyntheticTruth.from_dict(json.load(fh))
        else:
            truth = random_truth(syn.n_countries, seed=syn.seed)
        seeds["synthetic"] = syn.seed
        assaf, mort, e0, record = simulate_synthetic(truth, syn.n_periods, seed=syn.seed)
        save_record(record, out / "truth.json")
        files.append(out / "truth.json")
    countries = _select_countries(cfg, mort, assaf)
    write_surface(mort.restrict_countries(countries), files[0])
    write_surface(assaf.restrict_countries(countries), files[1])
    write_e0_series(_restrict_e0(e0, countries), files[2])
    return files, seeds


def _restrict_e0(e0, countries):
    return E0Series({k: v for k, v in e0.slices.items() if k[0] in countries})


def _select_countries(cfg, mort, assaf):
    available = sorted(set(mort.countries(Sex.MALE)) & set(assaf.countries(Sex.MALE)))
    chosen = [c for c in (cfg.countries or available) if c in available and c not in set(cfg.exclude)]
    if not chosen:
        raise EmptySlice("no country has both male mortality and ASSAF data")
    return chosen


def observed_e0(mortality):
    """All-cause e0 for every slice of a mortality surface."""
    out = {}
    for (c, sex), sl in mortality.slices.items():
        out[(c, sex)] = (sl.periods.copy(), e0_from_rates(sl.values, mortality.grid, sex=sex))
    return E0Series(out)


def _load_inputs(root):
    d = root / "data"
    return (
        load_mortality_surface(d / "mortality.csv"),
        load_assaf_surface(d / "assaf.csv"),
        load_e0_series(d / "e0.csv"),
    )


def _forecast_periods(last, horizon):
    return tuple(int(last) + 5 * (h + 1) for h in range(horizon))


def _asaf_median(fc, mortality, sex):
    """Median over draws of forecast ASAF, weighting by last observed rates."""
    out = {}
    for i, c in enumerate(fc.countries):
        sl = mortality.get(c, sex)
        weights = sl.values[-1]
        out[c] = np.median(asaf_from_assaf(fc.values[:, i], np.broadcast_to(weights, fc.values[:, i].shape)), axis=0)
    return out


def _stage_assaf(cfg, root):
    mort, assaf, _ = _load_inputs(root)
    out = root / "assaf"
    out.mkdir(parents=True, exist_ok=True)
    countries = mort.countries(Sex.MALE)
    last = max(int(assaf.get(c, Sex.MALE).periods[-1]) for c in countries)
    horizon = _forecast_periods(last, cfg.horizon)
    files, seeds, medians = [], {}, {}
    for sex in (Sex.MALE, Sex.FEMALE):
        have = [c for c in countries if (c, sex) in assaf.slices]
        if not have:
            continue
        seed = derive_seed(cfg.seed, "assaf", 0 if sex == Sex.MALE else 1)
        seeds[f"fit_{sex.value}"] = seed
        draws = fit_assaf_bhm(assaf, cfg.assaf_chain.to_chain_config(seed), sex, have, workers=cfg.workers)
        draws.save(out / f"draws_{sex.value}.npz")
        files.append(out / f"draws_{sex.value}.npz")
        fseed = derive_seed(cfg.seed, "assaf", 10 + (0 if sex == Sex.MALE else 1))
        seeds[f"forecast_{sex.value}"] = fseed
        fc = forecast_assaf(draws, horizon, rng=fseed)
        medians[sex] = _asaf_median(fc, mort, sex)
        if sex == Sex.MALE:
            surfaces = posterior_assaf_mean_samples(draws, cfg.samples, np.concatenate([draws.meta["periods"], horizon]))
            stack = np.stack([[s.get(c, sex).values for c in draws.meta["countries"]] for s in surfaces])
            np.savez_compressed(
                out / "mean_samples.npz",
                values=stack,
                periods=np.asarray(surfaces[0].get(countries[0], sex).periods),
                countries=np.array(draws.meta["countries"]),
            )
            files.append(out / "mean_samples.npz")
    rows = []
    for c in countries:
        for j, p in enumerate(horizon):
            hm = medians.get(Sex.MALE, {}).get(c)
            hf = medians.get(Sex.FEMALE, {}).get(c)
            h = np.nan if hm is None or hf is None else float(hm[j] - hf[j])
            rows.append((c, p - 3, h))
    pd.DataFrame(rows, columns=["country", "period_start", "h"]).to_csv(out / "asaf_gap.csv", index=False)
    files.append(out / "asaf_gap.csv")
    return files, seeds


def _load_mean_samples(root):
    with np.load(root / "assaf" / "mean_samples.npz") as z:
        return z["values"], z["periods"], [str(c) for c in z["countries"]]


def _sample_surface(values, periods, countries, s, grid, keep_periods=None):
    from .data import AssafSurface, Slice

    periods = np.asarray(periods)
    keep = np.ones(periods.size, bool) if keep_periods is None else np.isin(periods, keep_periods)
    slices = {(c, Sex.MALE): Slice(periods[keep].copy(), values[s, i][keep].copy()) for i, c in enumerate(countries)}
    return AssafSurface(grid, slices)


def _fit_one_sample(args):
    """Fit and forecast the e0ns model for one ASSAF mean sample."""
    cfg, root, s = args
    mort, _, _ = _load_inputs(root)
    values, periods, countries = _load_mean_samples(root)
    est = [int(p) for p in mort.get(countries[0], Sex.MALE).periods]
    hist = _sample_surface(values, periods, countries, s, mort.grid, est)
    series = e0ns_from_surfaces(mort, hist, Sex.MALE, countries)
    out = root / "e0ns" / f"sample_{s:03d}"
    out.mkdir(parents=True, exist_ok=True)
    write_e0_series(series, out / "series.csv", "e0ns")
    seed = derive_seed(cfg.seed, "e0ns", s)
    stage1 = cfg.e0ns_stage1_chain.to_chain_config(seed) if cfg.e0ns_stage1_chain else None
    draws = fit_e0ns_bhm(series, cfg.e0ns_chain.to_chain_config(seed), Sex.MALE, countries, stage1_config=stage1)
    draws.save(out / "draws.npz")
    VarianceSpline.from_dict(draws.meta["spline"]).to_frame().to_csv(out / "spline.csv", index=False)
    fseed = derive_seed(cfg.seed, "e0ns", 10_000 + s)
    traj = forecast_e0ns(draws, horizon=cfg.horizon, rng=fseed)
    traj.save(out / "forecast.npz")
    files = [out / n for n in ("series.csv", "draws.npz", "spline.csv", "forecast.npz")]
    return files, {f"fit_{s}": seed, f"forecast_{s}": fseed}


def _stage_e0ns(cfg, root):
    jobs = [(cfg, root, s) for s in range(cfg.samples)]
    if cfg.workers > 1 and cfg.samples > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_fit_one_sample, jobs))
    else:
        results = [_fit_one_sample(j) for j in jobs]
    files, seeds = [], {}
    for f, sd in results:
        files += f
        seeds.update(sd)
    return files, seeds


def _stage_male(cfg, root):
    mort, _, _ = _load_inputs(root)
    values, periods, countries = _load_mean_samples(root)
    out = root / "male"
    out.mkdir(parents=True, exist_ok=True)
    files, pooled = [], []
    for s in range(cfg.samples):
        traj = TrajectorySet.load(root / "e0ns" / f"sample_{s:03d}" / "forecast.npz")
        y = values[s]  # (L, P, A)
        rates = {}
        for i, c in enumerate(countries):
            sl = mort.get(c, Sex.MALE)
            hist_y = y[i][np.isin(periods, sl.periods)]
            rates[c] = (sl.periods, sl.values[np.isin(sl.periods, periods)] * (1.0 - hist_y))
        params = fit_lee_carter_panel(rates, cfg.coherence)
        fidx = np.isin(periods, traj.periods)
        fc = AssafForecast(countries, periods[fidx], y[None][:, :, fidx], mort.grid, "male")
        male = reconstruct_male_e0(traj.restrict_countries(countries), fc, params, mort.grid, Sex.MALE)
        male.save(out / f"sample_{s:03d}.npz")
        files.append(out / f"sample_{s:03d}.npz")
        pooled.append(male)
    TrajectorySet.pool(pooled).save(out / "pooled.npz")
    files.append(out / "pooled.npz")
    return files, {}


def _resolve_gap_coefficients(cfg, root, e0, mort, assaf):
    choice = cfg.gap.coefficients
    if choice == "table1":
        return GapCoefficients.table1()
    if choice == "fit":
        male = {c: e0.get(c, Sex.MALE) for c in e0.countries(Sex.MALE)}
        female = {c: e0.get(c, Sex.FEMALE) for c in e0.countries(Sex.FEMALE)}
        return fit_gap_model(build_gap_panel(male, female, historical_asaf_gap(mort, assaf)))
    return GapCoefficients.load(cfg.resolve(choice))


def historical_asaf_gap(mort, assaf):
    """Observed male-minus-female ASAF per country and period."""
    out = {}
    for c in assaf.countries(Sex.MALE):
        if (c, Sex.FEMALE) not in assaf.slices:
            continue
        per_sex = {}
        for sex in (Sex.MALE, Sex.FEMALE):
            sl, ms = assaf.get(c, sex), mort.get(c, sex)
            per_sex[sex] = dict(zip(sl.periods.tolist(), asaf_from_assaf(sl.values, np.stack([ms.at(p) for p in sl.periods]))))
        common = sorted(set(per_sex[Sex.MALE]) & set(per_sex[Sex.FEMALE]))
        out[c] = (np.array(common), np.array([per_sex[Sex.MALE][p] - per_sex[Sex.FEMALE][p] for p in common]))
    return out


def _stage_female(cfg, root):
    mort, assaf, e0 = _load_inputs(root)
    male = TrajectorySet.load(root / "male" / "pooled.npz")
    coef = _resolve_gap_coefficients(cfg, root, e0, mort, assaf)
    hpath = cfg.resolve(cfg.gap.asaf_gap) if cfg.gap.asaf_gap else root / "assaf" / "asaf_gap.csv"
    hframe = pd.read_csv(hpath)
    hframe["period"] = hframe["period_start"].map(normalize_period)
    h, anchor, last_gap = {}, {}, {}
    for c in male.countries:
        rows = hframe[hframe["country"].astype(str) == c].set_index("period")["h"]
        h[c] = rows.reindex(male.periods).to_numpy(float)
        if np.any(~np.isfinite(h[c])):
            raise EmptySlice(f"no forecast ASAF gap for {c}", key=c)
        pm, vm = e0.get(c, Sex.MALE)
        pf, vf = e0.get(c, Sex.FEMALE)
        if ANCHOR_PERIOD not in pm:
            raise MissingAnchor(f"no {ANCHOR_PERIOD} male e0 for {c}")
        anchor[c] = float(vm[list(pm).index(ANCHOR_PERIOD)])
        common = sorted(set(pm.tolist()) & set(pf.tolist()))
        last_gap[c] = float(vf[list(pf).index(common[-1])] - vm[list(pm).index(common[-1])])
    seed = derive_seed(cfg.seed, "female")
    gaps = forecast_gap(coef, male, h, last_gap, anchor, rng=seed)
    female = female_e0_from_gap(male, gaps)
    out = root / "female"
    out.mkdir(parents=True, exist_ok=True)
    coef.save(out / "gap_coefficients.json")
    gaps.save(out / "gap.npz")
    female.save(out / "pooled.npz")
    return [out / "gap_coefficients.json", out / "gap.npz", out / "pooled.npz"], {"gap": seed}


def observed_rows(e0, sex, countries, probs=DEFAULT_PROBS):
    rows = []
    for c in countries:
        periods, values = e0.get(c, sex)
        for p, v in zip(periods, values):
            rows.append((c, Sex.parse(sex).value, int(p) - 3, int(p), "observed", *([float(v)] * len(probs))))
    return rows


def summary_table(male, female, e0, probs=DEFAULT_PROBS):
    cols = ["country", "sex", "period_start", "period", "kind", *[f"q{p:g}" for p in probs]]
    parts = []
    for traj, sex in ((male, Sex.MALE), (female, Sex.FEMALE)):
        obs = pd.DataFrame(observed_rows(e0, sex, traj.countries, probs), columns=cols)
        fc = quantile_summary(traj, probs)
        fc.insert(4, "kind", "forecast")
        parts += [obs, fc[cols]]
    table = pd.concat(parts, ignore_index=True)
    return table.sort_values(["sex", "country", "period"], kind="stable").reset_index(drop=True)


def _stage_summary(cfg, root):
    _, _, e0 = _load_inputs(root)
    male = TrajectorySet.load(root / "male" / "pooled.npz")
    female = TrajectorySet.load(root / "female" / "pooled.npz")
    table = summary_table(male, female, e0)
    table.to_csv(root / "quantiles.csv", index=False)
    for sex in ("male", "female"):
        table[table["sex"] == sex].to_csv(root / f"quantiles_{sex}.csv", index=False)
    return [root / "quantiles.csv", root / "quantiles_male.csv", root / "quantiles_female.csv"], {}


_RUNNERS = {
    "data": _stage_data,
    "assaf": _stage_assaf,
    "e0ns": _stage_e0ns,
    "male": _stage_male,
    "female": _stage_female,
    "summary": _stage_summary,
}


def run_full_pipeline(cfg: RunConfig, force=False, stop_after=None):
    """Run (or resume) every stage and return the forecast bundle.

    Stages already recorded in the manifest under the same config hash and
    with intact outputs are skipped unless ``force`` is set.  Failures are
    re-raised as :class:`StageError` naming the stage.
    """
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(root / "manifest.json", cfg)
    if force:
        manifest.invalidate_from("data")
    for stage in STAGES:
        if manifest.complete(stage, root):
            log.info("stage %s: up to date", stage)
        else:
            manifest.invalidate_from(stage)
            log.info("stage %s: running", stage)
            try:
                outputs, seeds = _RUNNERS[stage](cfg, root)
            except SmokecastError as exc:
                raise StageError(stage, exc) from exc
            manifest.record(stage, root, outputs, seeds)
        if stage == stop_after:
            return None
    return load_bundle(root, manifest.data)


def load_bundle(root, manifest=None):
    root = Path(root)
    if manifest is None:
        manifest = json.loads((root / "manifest.json").read_text())
    return ForecastBundle(
        TrajectorySet.load(root / "male" / "pooled.npz"),
        TrajectorySet.load(root / "female" / "pooled.npz"),
        pd.read_csv(root / "quantiles.csv"),
        root,
        manifest,
    )


__all__ = [
    "ForecastBundle",
    "STAGES",
    "derive_seed",
    "historical_asaf_gap",
    "load_bundle",
    "observed_e0",
    "run_full_pipeline",
    "summary_table",
]
