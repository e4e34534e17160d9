"""Binding probabilities, round selection weights and the normalizing sum.

All probabilities are handled as logarithms internally. A molecule with
best-site energy ``e`` is bound in round ``r`` with probability
``t = sigmoid(log_tf[r] + e)``; junk binding mixes this with a constant,
``(1 - c_junk) * t + c_junk``. The probability of reading a type in round
``rbar`` is its product of per-round probabilities over rounds ``1..rbar``
divided by the same product summed over every double-stranded type.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .energy import EnergyMatrix, best_site, best_site_energies
from .seqcore import (
    MAX_PACKED_K,
    canonical_keys,
    pack,
    random_codes,
    revcomp_keys,
    unpack,
)

DEFAULT_MC_SAMPLE_SIZE = 100_000
EXACT_LIMIT = 10 ** 7
# substream tag so the Monte Carlo sample never shares draws with a pool
MC_STREAM = 0x5E1E


@dataclass(frozen=True, eq=False)
class SelexModel:
    """Energy matrix plus per-round log protein concentration and junk constant."""

    matrix: EnergyMatrix
    log_tf: tuple
    c_junk: float = 0.0

    def __post_init__(self):
        if not isinstance(self.matrix, EnergyMatrix):
            object.__setattr__(self, "matrix", EnergyMatrix(self.matrix))
        log_tf = tuple(float(x) for x in np.atleast_1d(self.log_tf))
        if not log_tf:
            raise ValueError("log_tf needs one entry per round")
        if not all(np.isfinite(log_tf)):
            raise ValueError("log_tf entries must be finite")
        if not 0.0 <= self.c_junk <= 1.0:
            raise ValueError(f"c_junk must lie in [0, 1], got {self.c_junk}")
        object.__setattr__(self, "log_tf", log_tf)
        object.__setattr__(self, "c_junk", float(self.c_junk))

    @property
    def rounds(self) -> int:
        return len(self.log_tf)

    @property
    def l(self) -> int:
        return self.matrix.l

    def _round(self, r: int) -> float:
        if not 1 <= r <= self.rounds:
            raise ValueError(f"round {r} outside 1..{self.rounds}")
        return self.log_tf[r - 1]


@dataclass(frozen=True)
class DenominatorEstimate:
    value: float
    sample_size: int
    standard_error: float
    seed: int | None = None
    rbar: int | None = None

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError(f"denominator must be positive, got {self.value}")
        if self.standard_error < 0:
            raise ValueError("standard error must be non-negative")

    @classmethod
    def exact(cls, value: float, rbar: int | None = None) -> "DenominatorEstimate":
        return cls(float(value), 0, 0.0, None, rbar)


# -- single-round binding ------------------------------------------------------


def log_sigmoid(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def bind_prob(model: SelexModel, s: str, r: int) -> float:
    """Probability that a molecule of type ``s`` is bound in round ``r``."""
    x = model._round(r) + best_site(model.matrix, s).energy
    return float(np.exp(log_sigmoid(x)))


def bind_prob_junk(t, c_junk: float):
    """Mix a specific binding probability with the junk constant."""
    if not 0.0 <= c_junk <= 1.0:
        raise ValueError(f"c_junk must lie in [0, 1], got {c_junk}")
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("binding probability must lie in [0, 1]")
    out = (1.0 - c_junk) * t + c_junk
    return float(out) if out.ndim == 0 else out


def log_odds(model: SelexModel, s: str, r: int) -> float:
    """``log(t / (1 - t))`` evaluated without cancellation.

    Both ``log t`` and ``log(1 - t)`` are formed directly from the linear
    predictor, so the result equals ``log_tf[r] + energy`` to rounding.
    """
    if model.c_junk != 0.0:
        raise ValueError("log_odds is defined for c_junk = 0")
    x = model._round(r) + best_site(model.matrix, s).energy
    log_t = log_sigmoid(x)
    log_1mt = log_sigmoid(-x)
    return float(log_t - log_1mt)


def log_round_probs(log_tf, c_junk: float, energies) -> np.ndarray:
    """``(n, R)`` log binding probabilities (junk-mixed) for best-site energies."""
    e = np.asarray(energies, dtype=np.float64)[:, None]
    log_t = log_sigmoid(np.asarray(log_tf, dtype=np.float64)[None, :] + e)
    if c_junk == 0.0:
        return log_t
    if c_junk == 1.0:
        return np.zeros_like(log_t)
    return np.logaddexp(np.log1p(-c_junk) + log_t, np.log(c_junk))


def log_selection_weights(model: SelexModel, energies) -> np.ndarray:
    """``(n, R)`` cumulative log weights; column ``rbar - 1`` is the prefix product."""
    return np.cumsum(log_round_probs(model.log_tf, model.c_junk, energies), axis=1)


def selection_weight(model: SelexModel, s: str, rbar: int) -> float:
    """Product of junk-mixed binding probabilities over rounds ``1..rbar``."""
    model._round(rbar)
    e = best_site(model.matrix, s).energy
    return float(np.exp(log_selection_weights(model, [e])[0, rbar - 1]))


# -- normalizing sum ------------------------------------------------------------


def _class_sizes(codes: np.ndarray) -> np.ndarray:
    """1 for reverse-complement palindromes, 2 otherwise."""
    k = codes.shape[1]
    keys = pack(codes)
    return np.where(keys == revcomp_keys(keys, k), 1, 2)


def _site_energies_bruteforce(matrix: EnergyMatrix, codes: np.ndarray) -> np.ndarray:
    # plain numpy scan kept separate from the compiled kernel on purpose
    l = matrix.l
    k = codes.shape[1]
    rows = np.arange(l)
    rc = (3 - codes)[:, ::-1]
    best = np.full(codes.shape[0], -np.inf)
    for strand in (codes, rc):
        for o in range(k - l + 1):
            best = np.maximum(best, matrix.values[rows, strand[:, o:o + l]].sum(axis=1))
    return best


def enumerate_types(k: int) -> np.ndarray:
    """Codes of one representative (the canonical one) per double-stranded type."""
    if 4 ** k > EXACT_LIMIT:
        raise ValueError(f"k={k} too large to enumerate (4**k > {EXACT_LIMIT})")
    keys = np.arange(4 ** k, dtype=np.int64)
    keys = keys[keys == canonical_keys(keys, k)]
    return unpack(keys, k)


def exact_log_denominators(model: SelexModel, k: int) -> np.ndarray:
    """Exact log normalizing sums for every round prefix, by enumeration."""
    codes = enumerate_types(k)
    energies = _site_energies_bruteforce(model.matrix, codes)
    return logsumexp(log_selection_weights(model, energies), axis=0)


def exact_denominator(model: SelexModel, rbar: int, k: int) -> float:
    """Sum of selection weights over all distinct double-stranded ``k``-mer types."""
    model._round(rbar)
    if k < model.l:
        raise ValueError(f"k={k} shorter than site length {model.l}")
    return float(np.exp(exact_log_denominators(model, k)[rbar - 1]))


@dataclass(frozen=True, eq=False)
class MCSample:
    """Uniform random ``k``-mers shared read-only by every objective evaluation.

    Each raw draw ``x`` carries importance weight ``4**k / (M * |class(x)|)``,
    where ``|class(x)|`` is 1 for reverse-complement palindromes and 2
    otherwise. The weighted sum is then an unbiased estimate of the sum over
    distinct double-stranded types.
    """

    codes: np.ndarray
    seed: int

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes, dtype=np.uint8)
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @classmethod
    def draw(cls, size: int, k: int, seed: int) -> "MCSample":
        if size < 1:
            raise ValueError(f"sample size must be >= 1, got {size}")
        return cls(random_codes(size, k, seed, stream=(MC_STREAM,)), seed)

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def k(self) -> int:
        return self.codes.shape[1]

    @cached_property
    def log_weights(self) -> np.ndarray:
        """Per-draw log importance weight (includes the ``1/M`` factor)."""
        if self.k <= MAX_PACKED_K:
            sizes = _class_sizes(self.codes)
        else:
            sizes = np.full(self.size, 2)
        return self.k * np.log(4.0) - np.log(sizes) - np.log(self.size)

    def estimate(self, model: SelexModel, energies: np.ndarray | None = None) -> list[DenominatorEstimate]:
        """Denominator estimates with standard errors for every round prefix."""
        if energies is None:
            energies = best_site_energies(model.matrix, self.codes)
        # per-draw terms y_m whose plain mean is the estimate
        log_y = log_selection_weights(model, energies) + (self.log_weights + np.log(self.size))[:, None]
        out = []
        for rbar in range(1, model.rounds + 1):
            col = log_y[:, rbar - 1]
            scale = col.max()
            y = np.exp(col - scale)
            mean = y.mean()
            se = y.std(ddof=1) / np.sqrt(self.size) if self.size > 1 else 0.0
            out.append(
                DenominatorEstimate(
                    float(mean * np.exp(scale)),
                    self.size,
                    float(se * np.exp(scale)),
                    self.seed,
                    rbar,
                )
            )
        return out


def mc_denominator(model: SelexModel, rbar: int, sample_size: int = DEFAULT_MC_SAMPLE_SIZE,
                   seed: int = 0, k: int = 16) -> DenominatorEstimate:
    """Monte Carlo estimate of the normalizing sum for round prefix ``rbar``."""
    model._round(rbar)
    sample = MCSample.draw(sample_size, k, seed)
    return sample.estimate(model)[rbar - 1]


def round_prob(model: SelexModel, s: str, rbar: int, denom: DenominatorEstimate) -> float:
    """Probability that a read drawn in round ``rbar`` is of type ``s``."""
    if not denom.value > 0:
        raise ValueError("denominator must be positive")
    return selection_weight(model, s, rbar) / denom.value


def fast_log_denominators(model: SelexModel, energies: np.ndarray, log_weights: np.ndarray) -> np.ndarray:
    """Log weighted sums for all prefixes via the compiled linear-space loop.

    Falls back to a log-space reduction when the linear sums leave the
    normal floating-point range.
    """
    log_tf = np.asarray(model.log_tf)
    with np.errstate(over="ignore"):
        neg = np.exp(-log_tf)
    shift = float(log_weights.max())
    sums = _kernels.round_weight_sums(energies, np.exp(log_weights - shift), neg, model.c_junk)
    if np.all(np.isfinite(sums)) and np.all(sums > 1e-280) and np.all(sums < 1e280):
        return np.log(sums) + shift
    lw = log_selection_weights(model, energies) + log_weights[:, None]
    return logsumexp(lw, axis=0)
