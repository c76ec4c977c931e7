"""Metropolis-within-Gibbs machinery shared by both hierarchical models.

Parameterization convention used everywhere in the package:

* ``Gamma(shape, rate)`` has mean ``shape / rate``;
* ``InvGamma(shape, scale)`` has mean ``scale / (shape - 1)``.

All randomness flows through an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .errors import EmptySupport, NonFiniteTarget, SamplingError, SmokecastError


@dataclass(frozen=True)
class ChainConfig:
    n_iterations: int = 10_000
    burn_in: int = 1_000
    thin: int = 10
    n_chains: int = 1
    seed: int = 20190101
    adaptation_window: int = 50

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("burn_in must be in [0, n_iterations)")
        if self.n_chains < 1 or self.adaptation_window < 1:
            raise ValueError("n_chains and adaptation_window must be positive")

    @property
    def retained_per_chain(self):
        return (self.n_iterations - self.burn_in) // self.thin

    @property
    def retained(self):
        return self.n_chains * self.retained_per_chain

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


ASSAF_PAPER_CONFIG = ChainConfig(n_iterations=100_000, burn_in=2_000, thin=20, n_chains=3)
E0NS_PAPER_CONFIG = ChainConfig(n_iterations=100_000, burn_in=1_000, thin=50, n_chains=1)
DESK_CONFIG = ChainConfig(n_iterations=10_000, burn_in=1_000, thin=10, n_chains=1)


def make_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


# ------------------------------------------------------- elementary draws

def sample_truncated_normal(mean, variance, lower, upper, rng, size=None):
    """Draw from N(mean, variance) restricted to ``[lower, upper]``.

    Either bound may be infinite; all arguments broadcast.
    """
    mean, variance, lower, upper = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mean, variance, lower, upper)))
    if np.any(variance <= 0):
        raise ValueError("variance must be positive")
    if np.any(lower >= upper):
        raise EmptySupport("truncation interval is empty")
    sd = np.sqrt(variance)
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    if size is None and mean.ndim == 0 and np.isinf(a) and np.isinf(b):
        return float(rng.normal(mean, sd))
    draw = stats.truncnorm.rvs(a, b, loc=mean, scale=sd, size=size, random_state=rng)
    out = np.clip(draw, lower, upper)
    return float(out) if np.ndim(out) == 0 else out


def truncnorm_logpdf(x, mean, variance, lower, upper):
    """Log density of the truncated normal, including its normalizer."""
    sd = np.sqrt(variance)
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    return stats.truncnorm.logpdf(x, a, b, loc=mean, scale=sd)


def normal_logpdf(x, mean, variance):
    return -0.5 * (np.log(2.0 * np.pi * variance) + (x - mean) ** 2 / variance)


def gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x
    return np.where(x > 0, out, -np.inf)


def invgamma_logpdf(x, shape, scale):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x
    return np.where(x > 0, out, -np.inf)


def sample_invgamma(shape, scale, rng):
    return scale / rng.gamma(shape, 1.0, size=np.broadcast(shape, scale).shape)


def sample_gig(p, a, b, rng):
    """Generalized inverse Gaussian: density ~ x^(p-1) exp(-(a x + b / x) / 2)."""
    omega = math.sqrt(a * b)
    return float(stats.geninvgauss.rvs(p, omega, scale=math.sqrt(b / a), random_state=rng))


# ------------------------------------------------------ conjugate updates

class ConjugateDraw(NamedTuple):
    value: object
    degenerate: bool  # True when no data were available and the prior was sampled


def normal_posterior(prior_mean, prior_var, n, total, obs_var):
    """Precision-weighted posterior of a normal mean.

    ``total`` is the sum of observations (n times their mean).
    """
    precision = 1.0 / prior_var + n / obs_var
    var = 1.0 / precision
    return var * (prior_mean / prior_var + total / obs_var), var


def invgamma_posterior(shape, scale, n, ss):
    return shape + 0.5 * n, scale + 0.5 * ss


def conjugate_update(kind, suff, prior, rng):
    """Draw from a standard conjugate full conditional.

    kind ``"normal-mean"``: ``suff = (n, mean, obs_var)`` and
    ``prior = (mean, var)``.
    kind ``"invgamma-variance"``: ``suff = (n, sum_of_squares)`` and
    ``prior = (shape, scale)``.

    With ``n == 0`` the prior itself is sampled and the draw is flagged.
    """
    if kind == "normal-mean":
        n, ybar, obs_var = suff
        if n > 0 and obs_var <= 0:
            raise ValueError("observation variance must be positive")
        m0, v0 = prior
        if n == 0:
            return ConjugateDraw(float(rng.normal(m0, math.sqrt(v0))), True)
        mean, var = normal_posterior(m0, v0, n, n * ybar, obs_var)
        return ConjugateDraw(float(rng.normal(mean, math.sqrt(var))), False)
    if kind == "invgamma-variance":
        n, ss = suff
        shape, scale = invgamma_posterior(prior[0], prior[1], n, ss)
        return ConjugateDraw(float(scale / rng.gamma(shape)), n == 0)
    raise ValueError(f"unknown conjugate kind {kind!r}")


# ------------------------------------------------------- Metropolis steps

def reflect(x, lower, upper):
    """Fold ``x`` back into ``[lower, upper]`` by repeated reflection."""
    x = np.asarray(x, dtype=float)
    lower = np.broadcast_to(lower, x.shape)
    upper = np.broadcast_to(upper, x.shape)
    out = x.copy()
    both = np.isfinite(lower) & np.isfinite(upper)
    if np.any(both):
        width = (upper - lower)[both]
        z = np.mod(x[both] - lower[both], 2.0 * width)
        out[both] = lower[both] + np.where(z > width, 2.0 * width - z, z)
    lo_only = np.isfinite(lower) & ~np.isfinite(upper)
    out[lo_only] = np.where(x[lo_only] < lower[lo_only], 2.0 * lower[lo_only] - x[lo_only], x[lo_only])
    hi_only = ~np.isfinite(lower) & np.isfinite(upper)
    out[hi_only] = np.where(x[hi_only] > upper[hi_only], 2.0 * upper[hi_only] - x[hi_only], x[hi_only])
    return out


def adaptive_mh_block(current, log_target, proposal_scale, bounds, rng, current_logp=None, chol=None):
    """One random-walk Metropolis step for a parameter block.

    ``current`` has shape ``(..., d)``; leading axes are independent batch
    members (e.g. countries) that accept or reject separately, and
    ``log_target`` maps ``(..., d) -> (...)``.  With ``chol`` unset the
    proposal is a diagonal Gaussian reflected into ``bounds``; with a
    Cholesky factor of shape ``(..., d, d)`` the proposal is correlated and
    points outside ``bounds`` are rejected.

    Returns ``(new, accepted, new_logp)``.
    """
    current = np.asarray(current, dtype=float)
    lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    if current_logp is None:
        current_logp = np.asarray(log_target(current), dtype=float)
    if not np.all(np.isfinite(current_logp)):
        raise NonFiniteTarget("log target is not finite at the current point")
    scale = np.asarray(proposal_scale, dtype=float)
    noise = rng.standard_normal(current.shape)
    if chol is None:
        proposal = reflect(current + scale * noise, lower, upper)
        inside = np.ones(current.shape[:-1], dtype=bool)
    else:
        step = np.einsum("...ij,...j->...i", chol, noise)
        proposal = current + scale * step
        inside = np.all((proposal >= lower) & (proposal <= upper), axis=-1)
        proposal = np.where(inside[..., None], proposal, current)
    prop_logp = np.asarray(log_target(proposal), dtype=float)
    with np.errstate(invalid="ignore"):
        log_ratio = np.where(inside, prop_logp - current_logp, -np.inf)
    log_ratio = np.where(np.isnan(log_ratio), -np.inf, log_ratio)
    accepted = np.log(rng.uniform(size=log_ratio.shape)) < log_ratio
    new = np.where(accepted[..., None], proposal, current)
    new_logp = np.where(accepted, prop_logp, current_logp)
    if new.ndim == 1:
        return new, bool(accepted), float(new_logp)
    return new, accepted, new_logp


class BlockAdapter:
    """Proposal tuning for a (batched) MH block during burn-in only.

    Keeps a per-member global scale nudged toward the acceptance band
    ``[low, high]`` and, when ``covariance`` is set, an empirical proposal
    covariance learnt from the burn-in path (Haario-style).  After
    :meth:`freeze` nothing changes, so the retained kernel is fixed.
    """

    def __init__(self, init_scale, batch_shape=(), covariance=False, low=0.2, high=0.4, min_cov_samples=200):
        init_scale = np.asarray(init_scale, dtype=float)
        self.dim = init_scale.shape[-1]
        self.batch_shape = tuple(batch_shape)
        self.scale = np.broadcast_to(init_scale, self.batch_shape + (self.dim,)).copy()
        self.log_mult = np.zeros(self.batch_shape)
        self.covariance = covariance
        self.low, self.high = low, high
        self.min_cov_samples = min_cov_samples
        self.chol = None
        self.frozen = False
        self._acc = np.zeros(self.batch_shape)
        self._n = 0
        self._windows = 0
        self._sum = np.zeros(self.batch_shape + (self.dim,))
        self._outer = np.zeros(self.batch_shape + (self.dim, self.dim))
        self._count = 0

    @property
    def proposal_scale(self):
        return np.exp(self.log_mult)[..., None] * (self.scale if self.chol is None else 1.0)

    def record(self, state, accepted):
        if self.frozen:
            return
        self._acc = self._acc + np.asarray(accepted, dtype=float)
        self._n += 1
        if self.covariance:
            state = np.asarray(state, dtype=float)
            self._sum += state
            self._outer += state[..., :, None] * state[..., None, :]
            self._count += 1

    def adapt(self):
        if self.frozen or self._n == 0:
            return
        self._windows += 1
        rate = self._acc / self._n
        step = min(1.0, 2.0 / math.sqrt(self._windows))
        self.log_mult = self.log_mult + np.where(rate < self.low, -step, 0.0) + np.where(rate > self.high, step, 0.0)
        self._acc = np.zeros(self.batch_shape)
        self._n = 0
        if self.covariance and self._count >= self.min_cov_samples and self.chol is None:
            self._set_chol()
            self.log_mult = np.zeros(self.batch_shape)

    def _set_chol(self):
        mean = self._sum / self._count
        cov = self._outer / self._count - mean[..., :, None] * mean[..., None, :]
        cov = cov * (2.38**2 / self.dim)
        diag = np.maximum(np.diagonal(cov, axis1=-2, axis2=-1), 1e-12)
        cov = cov + np.eye(self.dim) * (1e-6 * diag[..., None, :] + 1e-10)
        try:
            self.chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            self.chol = None

    def freeze(self):
        self.frozen = True

    def step(self, current, log_target, bounds, rng, current_logp=None):
        new, accepted, new_logp = adaptive_mh_block(
            current, log_target, self.proposal_scale, bounds, rng, current_logp=current_logp, chol=self.chol
        )
        self.record(new, accepted)
        return new, accepted, new_logp


# ------------------------------------------------------------ chain driver

@dataclass
class PosteriorDraws:
    """Retained MCMC samples: one row per retained iteration."""

    names: list
    draws: np.ndarray
    config: ChainConfig
    acceptance: dict = field(default_factory=dict)
    chain: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2 or self.draws.shape[1] != len(self.names):
            raise ValueError("draws must be a (samples x parameters) matrix matching names")
        if self.chain is None:
            self.chain = np.zeros(self.draws.shape[0], dtype=int)
        self._index = {n: i for i, n in enumerate(self.names)}

    @property
    def n_draws(self):
        return self.draws.shape[0]

    def column(self, name):
        return self.draws[:, self._index[name]]

    def columns(self, names):
        return self.draws[:, [self._index[n] for n in names]]

    def has(self, name):
        return name in self._index

    def chain_draws(self, name, chain=0):
        return self.column(name)[self.chain == chain]

    def subset(self, rows):
        rows = np.asarray(rows)
        return PosteriorDraws(list(self.names), self.draws[rows], self.config, dict(self.acceptance), self.chain[rows], dict(self.meta))

    # persistence: CSV for inspection, .npz (with a JSON header) for reuse
    def save(self, path):
        path = Path(path)
        header = {
            "names": list(self.names),
            "config": asdict(self.config),
            "acceptance": self.acceptance,
            "meta": self.meta,
        }
        if path.suffix == ".csv":
            import pandas as pd

            frame = pd.DataFrame(self.draws, columns=self.names)
            frame.insert(0, "chain", self.chain)
            frame.to_csv(path, index=False)
            path.with_suffix(".json").write_text(json.dumps(header, indent=1, default=_json_default))
        else:
            with open(path, "wb") as fh:
                np.savez_compressed(fh, draws=self.draws, chain=self.chain, header=np.array(json.dumps(header, default=_json_default)))
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.suffix == ".csv":
            import pandas as pd

            frame = pd.read_csv(path)
            sidecar = path.with_suffix(".json")
            header = json.loads(sidecar.read_text()) if sidecar.exists() else {}
            chain = frame.pop("chain").to_numpy() if "chain" in frame else None
            names = list(frame.columns)
            draws = frame.to_numpy(dtype=float)
        else:
            with np.load(path, allow_pickle=False) as z:
                header = json.loads(str(z["header"]))
                draws, chain = z["draws"], z["chain"]
            names = header["names"]
        config = ChainConfig(**header["config"]) if "config" in header else ChainConfig()
        return cls(names, draws, config, header.get("acceptance", {}), chain, header.get("meta", {}))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


class Block:
    """A named update step.  ``update`` returns ``(accepted, proposed)`` counts."""

    name = "block"
    adapter = None

    def update(self, state, rng, adapting):
        raise NotImplementedError


class GibbsBlock(Block):
    def __init__(self, name, fn):
        self.name = name
        self.fn = fn

    def update(self, state, rng, adapting):
        self.fn(state, rng)
        return 0, 0


def _run_one_chain(model, config, seed_seq, chain_idx):
    rng = make_rng(seed_seq)
    state = model.initialize(rng)
    blocks = model.make_blocks()
    rows = []
    accepted = {b.name: 0.0 for b in blocks}
    proposed = {b.name: 0.0 for b in blocks}
    for it in range(config.n_iterations):
        adapting = it < config.burn_in
        for block in blocks:
            try:
                acc, prop = block.update(state, rng, adapting)
            except SmokecastError as exc:
                raise SamplingError(f"block {block.name!r} failed at iteration {it}: {exc}", iteration=it, block=block.name) from exc
            if not adapting:
                accepted[block.name] += float(acc)
                proposed[block.name] += float(prop)
        if adapting and (it + 1) % config.adaptation_window == 0:
            for block in blocks:
                if block.adapter is not None:
                    block.adapter.adapt()
        if it + 1 == config.burn_in:
            for block in blocks:
                if block.adapter is not None:
                    block.adapter.freeze()
        if not adapting and (it - config.burn_in + 1) % config.thin == 0:
            row = model.flatten(state)
            if not np.all(np.isfinite(row)):
                raise SamplingError(f"non-finite parameter at iteration {it}", iteration=it)
            rows.append(row)
    rates = {name: (accepted[name] / proposed[name] if proposed[name] else None) for name in accepted}
    return np.array(rows).reshape(len(rows), len(model.param_names)), rates


def run_chain(model, config, workers=1):
    """Run ``config.n_chains`` chains of a block model and pool retained draws.

    ``model`` supplies ``param_names``, ``initialize(rng)``, ``make_blocks()``
    (fresh, per-chain blocks) and ``flatten(state)``.  Chain ``i`` is seeded
    from the ``i``-th child of ``SeedSequence(config.seed)``, so results are
    reproducible and independent of ``workers``.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    if workers > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_chain, [model] * config.n_chains, [config] * config.n_chains, seeds, range(config.n_chains)))
    else:
        results = [_run_one_chain(model, config, s, i) for i, s in enumerate(seeds)]
    draws = np.vstack([r[0] for r in results])
    chain = np.concatenate([np.full(r[0].shape[0], i) for i, r in enumerate(results)])
    acceptance = {name: [r[1][name] for r in results] for name in results[0][1]}
    return PosteriorDraws(list(model.param_names), draws, config, acceptance, chain)
