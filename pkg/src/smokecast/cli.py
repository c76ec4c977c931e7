"""Command-line interface."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import data as D
from .errors import SmokecastError


def _fail(exc):
    click.echo(f"error: {exc}", err=True)
    sys.exit(2)


class _Group(click.Group):
    """Turns library errors into a one-line message and exit status 2."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except SmokecastError as exc:
            _fail(exc)


def _chain_settings(config_path, key):
    from .config import RunConfig, load_config

    cfg = load_config(config_path) if config_path else RunConfig()
    return getattr(cfg, key), cfg.seed


@click.group(cls=_Group)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Smoking-aware probabilistic life expectancy forecasts."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------- data

@main.group()
def data():
    """Input file checks."""


@data.command("validate")
@click.option("--mortality", type=click.Path(exists=True))
@click.option("--assaf", type=click.Path(exists=True))
@click.option("--e0", type=click.Path(exists=True))
def data_validate(mortality, assaf, e0):
    """Print every invariant violation as a JSON line; exit 1 if any."""
    report = D.validate_files(mortality, assaf, e0)
    for rec in report:
        click.echo(json.dumps(rec))
    if report:
        sys.exit(1)
    click.echo(json.dumps({"status": "ok"}))


# ---------------------------------------------------------------- life tables

def _read_rate_vector(path, country, sex, period):
    frame = pd.read_csv(path, sep=None, engine="python")
    if "country" not in frame.columns:
        grid = D.grid_from_lowers(frame["age_lower"])
        return frame["mx"].to_numpy(float), grid, D.Sex.parse(sex or "male")
    surface = D.load_mortality_surface(path)
    keys = surface.keys()
    country = country or keys[0][0]
    sex = D.Sex.parse(sex or keys[0][1])
    sl = surface.get(country, sex)
    p = D.normalize_period(period) if period is not None else int(sl.periods[-1])
    return sl.at(p), surface.grid, sex


@main.command()
@click.option("--rates", required=True, type=click.Path(exists=True), help="age_lower,mx CSV or a mortality file.")
@click.option("--country")
@click.option("--sex")
@click.option("--period", type=int, help="Period start or label year (default: latest).")
def lifetable(rates, country, sex, period):
    """Print the full abridged life table and e0."""
    from .lifetable import life_table

    mx, grid, sex = _read_rate_vector(rates, country, sex, period)
    table = life_table(mx, grid, sex=sex)
    click.echo(table.to_frame().to_string(index=False))
    click.echo(f"e0 = {table.e0:.6f}")


# ---------------------------------------------------------------- e0ns

@main.group(invoke_without_command=True)
@click.option("--mortality", type=click.Path(exists=True))
@click.option("--assaf", type=click.Path(exists=True))
@click.option("--sex", default="male", show_default=True)
@click.option("--out", type=click.Path())
@click.pass_context
def e0ns(ctx, mortality, assaf, sex, out):
    """Non-smoking e0: series from data, or model fit/forecast subcommands."""
    if ctx.invoked_subcommand is not None:
        return
    if not (mortality and assaf):
        raise click.UsageError("--mortality and --assaf are required without a subcommand")
    from .lifetable import e0ns_from_surfaces

    series = e0ns_from_surfaces(D.load_mortality_surface(mortality), D.load_assaf_surface(assaf), sex)
    frame = series.to_frame("e0ns")
    if out:
        frame.to_csv(out, index=False)
    else:
        click.echo(frame.to_csv(index=False), nl=False)


@e0ns.command("fit")
@click.option("--series", required=True, type=click.Path(exists=True), help="CSV with an e0ns (or e0) value column.")
@click.option("--config", type=click.Path(exists=True))
@click.option("--sex", default="male", show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--spline-out", type=click.Path(), help="Write spline knots and coefficients here.")
def e0ns_fit(series, config, sex, out, spline_out):
    """Two-stage e0ns model fit; writes posterior draws."""
    from .e0ns import VarianceSpline, fit_e0ns_bhm

    frame = pd.read_csv(series)
    value = "e0ns" if "e0ns" in frame.columns else "e0"
    s = D.load_e0_series(series, schema={"value": value})
    settings, seed = _chain_settings(config, "e0ns_chain")
    draws = fit_e0ns_bhm(s, settings.to_chain_config(seed), sex)
    draws.save(out)
    if spline_out:
        VarianceSpline.from_dict(draws.meta["spline"]).to_frame().to_csv(spline_out, index=False)
    click.echo(f"wrote {draws.n_draws} draws to {out}")


@e0ns.command("forecast")
@click.option("--draws", "draws_path", required=True, type=click.Path(exists=True))
@click.option("--horizon", default=9, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def e0ns_forecast(draws_path, horizon, seed, out):
    """Posterior predictive e0ns trajectories."""
    from .e0ns import forecast_e0ns
    from .mcmc import PosteriorDraws

    traj = forecast_e0ns(PosteriorDraws.load(draws_path), horizon=horizon, rng=seed)
    traj.save(out)
    click.echo(f"wrote {traj.n_draws} trajectories to {out}")


# ---------------------------------------------------------------- mcmc

@main.group()
def mcmc():
    """Sampler utilities."""


@mcmc.command("diag")
@click.option("--draws", "draws_path", required=True, type=click.Path(exists=True))
@click.option("--param", "params", multiple=True, help="Parameter names (default: all).")
@click.option("--chain", default=0, show_default=True)
@click.option("--out", type=click.Path())
def mcmc_diag(draws_path, params, chain, out):
    """Raftery-Lewis run-length table at the 2.5% and 97.5% quantiles."""
    from .diagnostics import raftery_lewis_table
    from .mcmc import PosteriorDraws

    draws = PosteriorDraws.load(draws_path)
    table = pd.DataFrame(raftery_lewis_table(draws, list(params) or None, chain=chain))
    if out:
        table.to_csv(out, index=False)
    else:
        click.echo(table.to_string(index=False))


# ---------------------------------------------------------------- assaf

@main.group()
def assaf():
    """ASSAF model fit and forecast."""


@assaf.command("fit")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--config", type=click.Path(exists=True))
@click.option("--sex", default="male", show_default=True)
@click.option("--out", required=True, type=click.Path())
def assaf_fit(data_path, config, sex, out):
    """Fit the age-cohort ASSAF model; writes posterior draws."""
    from .assaf import fit_assaf_bhm

    settings, seed = _chain_settings(config, "assaf_chain")
    draws = fit_assaf_bhm(D.load_assaf_surface(data_path), settings.to_chain_config(seed), sex)
    draws.save(out)
    click.echo(f"wrote {draws.n_draws} draws to {out}")


@assaf.command("forecast")
@click.option("--draws", "draws_path", required=True, type=click.Path(exists=True))
@click.option("--horizon", default=9, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--effects-out", type=click.Path(), help="Age and cohort effect summaries (CSV).")
def assaf_forecast(draws_path, horizon, seed, out, effects_out):
    """Posterior predictive ASSAF for the periods after the data."""
    from .assaf import effect_summaries, forecast_assaf
    from .mcmc import PosteriorDraws

    draws = PosteriorDraws.load(draws_path)
    last = int(max(draws.meta["periods"]))
    fc = forecast_assaf(draws, tuple(last + 5 * (h + 1) for h in range(horizon)), rng=seed)
    fc.save(out)
    if effects_out:
        effect_summaries(draws).to_csv(effects_out, index=False)
    click.echo(f"wrote ASSAF forecasts for {len(fc.countries)} countries to {out}")


# ---------------------------------------------------------------- reconstruct

@main.command()
@click.option("--e0ns", "e0ns_path", required=True, type=click.Path(exists=True), help="e0ns trajectories.")
@click.option("--assaf", "assaf_path", required=True, type=click.Path(exists=True), help="Forecast ASSAF draws.")
@click.option("--history", required=True, type=click.Path(exists=True), help="Historical mortality file.")
@click.option("--history-assaf", type=click.Path(exists=True), help="Historical ASSAF (rates are taken as non-smoking otherwise).")
@click.option("--coherence", type=click.Choice(["none", "shared-bx"]), default="shared-bx", show_default=True)
@click.option("--out", required=True, type=click.Path())
def reconstruct(e0ns_path, assaf_path, history, history_assaf, coherence, out):
    """Male e0 trajectories from e0ns and ASSAF forecasts."""
    from .assaf import AssafForecast
    from .reconstruct import fit_lee_carter_panel, reconstruct_male_e0
    from .trajectories import TrajectorySet

    traj = TrajectorySet.load(e0ns_path)
    fc = AssafForecast.load(assaf_path)
    mort = D.load_mortality_surface(history)
    hist_y = D.load_assaf_surface(history_assaf) if history_assaf else None
    rates = {}
    for c in traj.countries:
        sl = mort.get(c, D.Sex.MALE)
        values = sl.values
        if hist_y is not None:
            ys = hist_y.get(c, D.Sex.MALE)
            keep = np.isin(sl.periods, ys.periods)
            values = values[keep] * (1.0 - ys.restrict(sl.periods[keep]).values)
            rates[c] = (sl.periods[keep], values)
        else:
            rates[c] = (sl.periods, values)
    male = reconstruct_male_e0(traj, fc, fit_lee_carter_panel(rates, coherence), mort.grid, D.Sex.MALE)
    male.save(out)
    click.echo(f"wrote {male.n_draws} male e0 trajectories to {out}")


# ---------------------------------------------------------------- gap

@main.group()
def gap():
    """Female-male gap model."""


@gap.command("fit")
@click.option("--panel", required=True, type=click.Path(exists=True))
@click.option("--hinge", default=61.0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def gap_fit(panel, hinge, out):
    """OLS fit of the gap regression; writes coefficients as JSON."""
    from .gap import fit_gap_model, fit_report

    coef = fit_gap_model(pd.read_csv(panel), hinge=hinge)
    coef.save(out)
    click.echo(fit_report(coef).to_string())
    click.echo(f"sigma = {coef.sigma:.4f}  R2 = {coef.r_squared:.4f}  n = {coef.n_obs}")


@gap.command("forecast")
@click.option("--coef", default="table1", show_default=True, help="Coefficient JSON or 'table1'.")
@click.option("--male", "male_path", required=True, type=click.Path(exists=True))
@click.option("--asafgap", required=True, type=click.Path(exists=True), help="CSV: country, period_start, h.")
@click.option("--e0", "e0_path", required=True, type=click.Path(exists=True), help="Observed e0 of both sexes.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--gap-out", type=click.Path())
def gap_forecast(coef, male_path, asafgap, e0_path, seed, out, gap_out):
    """Female e0 trajectories from male trajectories and forecast gaps."""
    from .gap import ANCHOR_PERIOD, GapCoefficients, female_e0_from_gap, forecast_gap
    from .trajectories import TrajectorySet

    coefs = GapCoefficients.table1() if coef == "table1" else GapCoefficients.load(coef)
    male = TrajectorySet.load(male_path)
    e0 = D.load_e0_series(e0_path)
    hframe = pd.read_csv(asafgap)
    hframe["period"] = hframe["period_start"].map(D.normalize_period)
    h, anchor, last = {}, {}, {}
    for c in male.countries:
        h[c] = hframe[hframe["country"].astype(str) == c].set_index("period")["h"].reindex(male.periods).to_numpy(float)
        pm, vm = e0.get(c, "male")
        pf, vf = e0.get(c, "female")
        if ANCHOR_PERIOD in pm:
            anchor[c] = float(vm[list(pm).index(ANCHOR_PERIOD)])
        p = max(set(pm.tolist()) & set(pf.tolist()))
        last[c] = float(vf[list(pf).index(p)] - vm[list(pm).index(p)])
    gaps = forecast_gap(coefs, male, h, last, anchor, rng=seed)
    female = female_e0_from_gap(male, gaps)
    female.save(out)
    if gap_out:
        gaps.save(gap_out)
    click.echo(f"wrote {female.n_draws} female e0 trajectories to {out}")


# ---------------------------------------------------------------- pipeline

@main.command()
@click.option("--config", required=True, type=click.Path(exists=True))
@click.option("--force", is_flag=True, help="Recompute every stage.")
def run(config, force):
    """Full forecasting run (resumes completed stages)."""
    from .config import load_config
    from .pipeline import run_full_pipeline

    cfg = load_config(config)
    bundle = run_full_pipeline(cfg, force=force)
    click.echo(f"quantile tables in {bundle.output_dir}; config hash {bundle.manifest['config_hash'][:12]}")


@main.command()
@click.option("--config", required=True, type=click.Path(exists=True))
@click.option("--split", required=True, type=int, help="First held-out period start year (2000 or 2010).")
def validate(config, split):
    """Out-of-sample scores for the full model and the Lee-Carter baseline."""
    from .config import load_config
    from .validation import out_of_sample_validate

    metrics, _ = out_of_sample_validate(load_config(config), split)
    click.echo(metrics.to_string(index=False))


@main.command()
@click.option("--truth", type=click.Path(exists=True), help="Truth record (JSON/YAML); random if omitted.")
@click.option("--countries", default=5, show_default=True)
@click.option("--periods", default=13, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def simulate(truth, countries, periods, seed, out):
    """Write synthetic mortality, ASSAF and e0 files plus the truth record."""
    import yaml

    from .simulate import SyntheticTruth, random_truth, save_record, simulate_synthetic

    if truth:
        with open(truth) as fh:
            tr = SyntheticTruth.from_dict(yaml.safe_load(fh))
    else:
        tr = random_truth(countries, seed=seed)
    a, m, e, record = simulate_synthetic(tr, periods, seed=seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    D.write_surface(m, out / "mortality.csv")
    D.write_surface(a, out / "assaf.csv")
    D.write_e0_series(e, out / "e0.csv")
    save_record(record, out / "truth.json")
    click.echo(f"wrote synthetic data for {len(tr.countries)} countries to {out}")


if __name__ == "__main__":
    main()
