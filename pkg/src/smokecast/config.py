"""Run configuration: YAML (or JSON) files mapped onto dataclasses."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .mcmc import ChainConfig


@dataclass
class ChainSettings:
    n_iterations: int = 10000
    burn_in: int = 1000
    thin: int = 10
    n_chains: int = 1

    def to_chain_config(self, seed):
        return ChainConfig(self.n_iterations, self.burn_in, self.thin, self.n_chains, int(seed))


@dataclass
class DataPaths:
    mortality: str | None = None
    assaf: str | None = None
    e0: str | None = None


@dataclass
class SyntheticSettings:
    n_countries: int = 5
    n_periods: int = 13
    seed: int = 1
    truth: str | None = None  # optional truth file; drawn at random otherwise


@dataclass
class GapSettings:
    coefficients: str = "table1"  # "table1", "fit" or a JSON file
    asaf_gap: str | None = None  # optional CSV of forecast ASAF gaps (country, period_start, h)


@dataclass
class RunConfig:
    """Everything a pipeline run depends on.

    ``data`` paths win over ``synthetic``; with neither, synthetic data is
    generated from the default settings.
    """

    output: str = "smokecast-out"
    seed: int = 20190101
    samples: int = 5
    horizon: int = 9
    coherence: str = "shared-bx"
    workers: int = 1
    countries: list | None = None
    exclude: list = field(default_factory=list)
    data: DataPaths = field(default_factory=DataPaths)
    synthetic: SyntheticSettings | None = field(default_factory=SyntheticSettings)
    assaf_chain: ChainSettings = field(default_factory=ChainSettings)
    e0ns_chain: ChainSettings = field(default_factory=ChainSettings)
    e0ns_stage1_chain: ChainSettings | None = None
    gap: GapSettings = field(default_factory=GapSettings)
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if self.coherence not in ("none", "shared-bx"):
            raise ValueError(f"coherence must be 'none' or 'shared-bx', not {self.coherence!r}")
        if self.samples < 1 or self.horizon < 1:
            raise ValueError("samples and horizon must be positive")

    @property
    def uses_files(self):
        return self.data.mortality is not None

    def resolve(self, path):
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def output_dir(self):
        return self.resolve(self.output)

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        return d

    def config_hash(self):
        """sha256 of the canonical JSON form (paths as written, base dir excluded)."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_updates(self, **changes):
        return replace(self, **changes)


_NESTED = {
    "data": DataPaths,
    "synthetic": SyntheticSettings,
    "assaf_chain": ChainSettings,
    "e0ns_chain": ChainSettings,
    "e0ns_stage1_chain": ChainSettings,
    "gap": GapSettings,
}


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ValueError(f"{where}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**raw)


def config_from_dict(raw, base_dir="."):
    raw = dict(raw or {})
    for key, cls in _NESTED.items():
        if key in raw and raw[key] is not None:
            raw[key] = _build(cls, raw[key], key)
    raw["base_dir"] = str(base_dir)
    return _build(RunConfig, raw, "config")


def load_config(path):
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return config_from_dict(raw, base_dir=path.parent)


def save_config(config, path):
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


def desk_config(output="smokecast-out", **overrides):
    """Small synthetic run: five countries, five samples, short chains."""
    short = ChainSettings(3000, 1000, 10, 1)
    cfg = RunConfig(output=output, assaf_chain=short, e0ns_chain=short)
    return replace(cfg, **overrides)


__all__ = [
    "ChainSettings",
    "DataPaths",
    "GapSettings",
    "RunConfig",
    "SyntheticSettings",
    "config_from_dict",
    "desk_config",
    "load_config",
    "save_config",
]
