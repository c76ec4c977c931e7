"""Raftery-Lewis run-length diagnostic.

The chain is dichotomized at its empirical ``q``-quantile; the smallest
thinning interval at which the indicator sequence looks first-order Markov
(BIC of a second-order alternative) yields transition probabilities from
which the burn-in ``M``, total run length ``N`` and dependence factor
``I = N / N_min`` follow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ChainTooShort


@dataclass(frozen=True)
class RafteryLewisEntry:
    burn: int
    total: int
    n_min: int
    dependence: float
    thin: int
    q: float
    r: float
    s: float


def minimum_iid_size(q, r, s):
    """Run length needed by an iid sampler: ``ceil(z^2 q (1-q) / r^2)``."""
    z = norm.ppf(0.5 * (s + 1.0))
    return int(math.ceil(z * z * q * (1.0 - q) / (r * r)))


def _second_order_bic(z):
    n = z.size
    counts = np.zeros((2, 2, 2))
    np.add.at(counts, (z[:-2], z[1:-1], z[2:]), 1.0)
    g2 = 0.0
    for i in range(2):
        for j in range(2):
            for k in range(2):
                c = counts[i, j, k]
                if c > 0:
                    fitted = counts[i, j, :].sum() * counts[:, j, k].sum() / counts[:, j, :].sum()
                    g2 += 2.0 * c * math.log(c / fitted)
    return g2 - 2.0 * math.log(n - 2)


def raftery_lewis(chain, q=0.025, r=0.0125, s=0.95, eps=0.001):
    """Diagnose how long a chain must run to estimate its ``q`` quantile.

    Parameters
    ----------
    chain : array_like
        One-dimensional draws.
    q, r, s : float
        Quantile, accuracy (+/- r) and probability of attaining it.
    eps : float
        Precision for the burn-in convergence criterion.
    """
    x = np.asarray(chain, dtype=float).ravel()
    n_min = minimum_iid_size(q, r, s)
    if x.size < n_min:
        raise ChainTooShort(f"chain of length {x.size} is shorter than the pilot minimum {n_min}", minimum=n_min)
    z = (x <= np.quantile(x, q)).astype(int)
    thin = 0
    while True:
        thin += 1
        zt = z[::thin]
        if zt.size < 3:
            raise ChainTooShort("chain too short to find an adequate thinning interval", minimum=n_min * thin)
        if _second_order_bic(zt) < 0:
            break
    trans = np.zeros((2, 2))
    np.add.at(trans, (zt[:-1], zt[1:]), 1.0)
    row0, row1 = trans[0].sum(), trans[1].sum()
    alpha = trans[0, 1] / row0 if row0 else 0.0
    beta = trans[1, 0] / row1 if row1 else 0.0
    if alpha + beta == 0.0 or alpha * beta == 0.0:
        # indicator never switches: the chain carries no information on q
        return RafteryLewisEntry(0, x.size, n_min, float("inf"), thin, q, r, s)
    lam = abs(1.0 - alpha - beta)
    if lam == 0.0:
        burn = thin
    else:
        burn = int(math.ceil(math.log(eps * (alpha + beta) / max(alpha, beta)) / math.log(lam)) * thin)
    phi = norm.ppf(0.5 * (s + 1.0))
    keep = (2.0 - alpha - beta) * alpha * beta * phi * phi / ((alpha + beta) ** 3 * r * r)
    total = burn + int(math.ceil(keep)) * thin
    return RafteryLewisEntry(burn, total, n_min, total / n_min, thin, q, r, s)


def raftery_lewis_table(draws, names=None, q_pair=(0.025, 0.975), r=0.0125, s=0.95, chain=0):
    """Diagnostics for several parameters at a lower and an upper quantile.

    Returns a list of row dicts laid out as Burn1, Size1, DF1, Burn2,
    Size2, DF2 per parameter.  Parameters whose draws are constant (e.g. a
    value fixed for identifiability) get empty cells.
    """
    names = names or list(draws.names)
    rows = []
    for name in names:
        x = draws.chain_draws(name, chain)
        row = {"parameter": name}
        for tag, q in zip(("1", "2"), q_pair):
            if np.ptp(x) == 0:
                row.update({f"Burn{tag}": None, f"Size{tag}": None, f"DF{tag}": None})
                continue
            entry = raftery_lewis(x, q, r, s)
            row.update({f"Burn{tag}": entry.burn, f"Size{tag}": entry.total, f"DF{tag}": round(entry.dependence, 2)})
        rows.append(row)
    return rows
