"""Stochastic SELEX simulator: selection, PCR resampling and read sampling.

Pools are type -> multiplicity maps. Selection thins each type binomially,
PCR is a Polya urn run until the pool is back at its target size, and
sequencing draws a multivariate hypergeometric sample whose remainder feeds
the next round. Every random step uses a substream keyed by
``(seed, round, stage[, chunk])``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .energy import best_site_energies
from .fit import RoundCounts
from .seqcore import SequencePool, canonical_keys, decode_many, random_pool, substream, unpack
from .thermo import SelexModel, log_round_probs

log = logging.getLogger(__name__)

STAGE_SELECT = 1
STAGE_PCR = 2
STAGE_SAMPLE = 3
SELECT_CHUNK = 1 << 15


class DepletedPoolError(RuntimeError):
    def __init__(self, round_index: int):
        super().__init__(f"no molecules survived selection in round {round_index}")
        self.round = round_index


@dataclass(frozen=True)
class SimConfig:
    model: SelexModel
    pool_size: int = 1_000_000
    k: int = 16
    sample_per_round: int = 2000
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.sample_per_round < 1:
            raise ValueError("sample_per_round must be >= 1")
        if self.pool_size < self.sample_per_round:
            raise ValueError("pool_size must be >= sample_per_round")
        if self.k < self.model.l:
            raise ValueError(f"k={self.k} shorter than site length {self.model.l}")

    @property
    def rounds(self) -> int:
        return self.model.rounds


def survival_probs(pool: SequencePool, model: SelexModel, r: int) -> np.ndarray:
    energies = best_site_energies(model.matrix, pool.codes())
    log_t = log_round_probs([model.log_tf[r - 1]], model.c_junk, energies)[:, 0]
    return np.exp(log_t)


def select_round(pool: SequencePool, model: SelexModel, r: int, seed: int = 0,
                 n_jobs: int = 1) -> SequencePool:
    """Keep each molecule independently with its round-``r`` binding probability.

    Types are thinned in fixed chunks, each with its own substream, so the
    outcome is identical for any ``n_jobs``. May return an empty pool.
    """
    if pool.size == 0:
        raise ValueError("cannot select from an empty pool")
    model._round(r)
    p = survival_probs(pool, model, r)
    starts = range(0, pool.n_types, SELECT_CHUNK)

    def thin(c_start):
        c = c_start // SELECT_CHUNK
        rng = substream(seed, r, STAGE_SELECT, c)
        sl = slice(c_start, c_start + SELECT_CHUNK)
        return rng.binomial(pool.counts[sl], p[sl])

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(thin, starts))
    else:
        parts = [thin(s) for s in starts]
    kept = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    mask = kept > 0
    return SequencePool(pool.keys[mask], kept[mask], pool.k)


def pcr_amplify(pool: SequencePool, target: int, seed: int = 0, stream: tuple = ()) -> SequencePool:
    """Duplicate randomly chosen molecules until the pool holds ``target``.

    Repeated draw-and-duplicate is a Polya urn; its final composition is
    sampled exactly as Dirichlet-multinomial additions on top of the current
    counts. No new types can appear.
    """
    n = pool.size
    if n == 0:
        raise ValueError("cannot amplify an empty pool")
    if target < n:
        raise ValueError(f"target {target} smaller than pool size {n}")
    if target == n:
        return pool
    rng = substream(seed, *stream, STAGE_PCR)
    weights = rng.dirichlet(pool.counts.astype(np.float64))
    added = rng.multinomial(target - n, weights)
    return SequencePool(pool.keys, pool.counts + added, pool.k)


def sequence_sample(pool: SequencePool, m: int, seed: int = 0, stream: tuple = ()):
    """Draw ``m`` molecules without replacement.

    Returns ``(sample, remainder)`` as pools; the sample keeps each molecule
    in the orientation it was drawn.
    """
    if m < 1:
        raise ValueError("sample size must be >= 1")
    if m > pool.size:
        raise ValueError(f"cannot sample {m} molecules from a pool of {pool.size}")
    rng = substream(seed, *stream, STAGE_SAMPLE)
    drawn = rng.multivariate_hypergeometric(pool.counts, m, method="marginals")
    rest = pool.counts - drawn
    sample = SequencePool(pool.keys[drawn > 0], drawn[drawn > 0], pool.k)
    remainder = SequencePool(pool.keys[rest > 0], rest[rest > 0], pool.k)
    return sample, remainder


def pool_to_counts(pool: SequencePool) -> dict[str, int]:
    """Aggregate a pool to ``{canonical sequence: count}``."""
    keys = canonical_keys(pool.keys, pool.k)
    uniq, inv = np.unique(keys, return_inverse=True)
    counts = np.bincount(inv, weights=pool.counts, minlength=uniq.size).astype(np.int64)
    seqs = decode_many(unpack(uniq, pool.k))
    return dict(zip(seqs, counts.tolist()))


def simulate_selex(config: SimConfig, return_pools: bool = False):
    """Run the full protocol and return the per-round read counts.

    Round 0 is a uniform random pool of ``pool_size`` molecules. Each round
    selects, amplifies back to ``pool_size`` and sequences
    ``sample_per_round`` molecules; the unsequenced remainder starts the
    next round. With ``return_pools=True`` also returns the list of
    ``(selected, amplified, sample, remainder)`` pools per round.
    """
    pool = random_pool(config.pool_size, config.k, config.seed)
    rounds = {}
    history = []
    for r in range(1, config.rounds + 1):
        selected = select_round(pool, config.model, r, seed=config.seed, n_jobs=config.n_jobs)
        if selected.size == 0:
            raise DepletedPoolError(r)
        amplified = pcr_amplify(selected, max(config.pool_size, selected.size),
                                seed=config.seed, stream=(r,))
        sample, remainder = sequence_sample(amplified, config.sample_per_round,
                                            seed=config.seed, stream=(r,))
        log.debug("round %d: %d survivors in %d types", r, selected.size, selected.n_types)
        rounds[r] = pool_to_counts(sample)
        if return_pools:
            history.append((selected, amplified, sample, remainder))
        pool = remainder
        if pool.size == 0 and r < config.rounds:
            raise DepletedPoolError(r + 1)
    counts = RoundCounts(rounds, config.k)
    if return_pools:
        return counts, history
    return counts
