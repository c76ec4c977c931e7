import json

import numpy as np
import pandas as pd
import pytest

from smokecast.config import ChainSettings, SyntheticSettings, config_from_dict, desk_config, load_config, save_config
from smokecast.errors import StageError
from smokecast.pipeline import STAGES, derive_seed, load_bundle, run_full_pipeline

TINY = ChainSettings(600, 300, 3, 1)


def small_config(out, **kw):
    return desk_config(str(out), samples=2, synthetic=SyntheticSettings(n_countries=3), assaf_chain=TINY, e0ns_chain=TINY, **kw)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe") / "run"
    bundle = run_full_pipeline(small_config(out))
    return out, bundle


def test_shapes_and_counts(run_dir):
    out, bundle = run_dir
    assert bundle.male.values.shape == (2 * 100, 3, 9)
    assert bundle.female.values.shape == bundle.male.values.shape
    q = bundle.quantiles
    per_cell = q.groupby(["country", "sex"]).size()
    assert np.all(per_cell == 13 + 9)
    assert set(q["kind"]) == {"observed", "forecast"}
    assert np.all(bundle.female.values - bundle.male.values >= 0.03 - 1e-12)
    assert list(bundle.male.periods) == list(range(2018, 2059, 5))


def test_manifest(run_dir):
    out, bundle = run_dir
    m = json.loads((out / "manifest.json").read_text())
    assert set(m["stages"]) == set(STAGES)
    assert m["config_hash"] == small_config(out).config_hash()
    assert "quantiles.csv" in m["stages"]["summary"]["outputs"]
    assert m["stages"]["e0ns"]["seeds"]


def test_resume_only_reruns_later_stages(run_dir):
    out, _ = run_dir
    before = {p: p.stat().st_mtime_ns for p in (out / "assaf").glob("*")}
    table = (out / "quantiles.csv").read_bytes()
    (out / "female" / "pooled.npz").unlink()
    (out / "quantiles.csv").unlink()
    bundle = run_full_pipeline(small_config(out))
    assert {p: p.stat().st_mtime_ns for p in (out / "assaf").glob("*")} == before
    assert (out / "quantiles.csv").read_bytes() == table
    assert load_bundle(out).quantiles.equals(bundle.quantiles)


def test_stage_errors_are_labelled(tmp_path):
    cfg = small_config(tmp_path / "bad", countries=["nowhere"])
    with pytest.raises(StageError) as info:
        run_full_pipeline(cfg)
    assert info.value.stage == "data"


def test_stop_after(tmp_path):
    cfg = small_config(tmp_path / "part")
    assert run_full_pipeline(cfg, stop_after="data") is None
    assert (tmp_path / "part" / "data" / "truth.json").exists()
    assert not (tmp_path / "part" / "assaf").exists()


def test_derive_seed():
    assert derive_seed(1, "e0ns", 3) == derive_seed(1, "e0ns", 3)
    assert len({derive_seed(1, s, i) for s in STAGES for i in range(5)}) == len(STAGES) * 5


def test_config_round_trip(tmp_path):
    cfg = small_config(tmp_path / "o")
    save_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back.config_hash() == cfg.config_hash()
    with pytest.raises(ValueError):
        config_from_dict({"nonsense": 1})
    with pytest.raises(ValueError):
        config_from_dict({"coherence": "full"})


def test_observed_file_inputs(run_dir, tmp_path):
    out, _ = run_dir
    data = out / "data"
    cfg = config_from_dict(
        {
            "output": str(tmp_path / "files"),
            "samples": 1,
            "data": {"mortality": str(data / "mortality.csv"), "assaf": str(data / "assaf.csv"), "e0": str(data / "e0.csv")},
            "assaf_chain": {"n_iterations": 600, "burn_in": 300, "thin": 3},
            "e0ns_chain": {"n_iterations": 600, "burn_in": 300, "thin": 3},
            "exclude": ["S02"],
        }
    )
    bundle = run_full_pipeline(cfg)
    assert bundle.male.countries == ["S00", "S01"]
    assert isinstance(bundle.quantiles, pd.DataFrame)
