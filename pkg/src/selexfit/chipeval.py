"""Enrichment of predicted binding sites around ChIP peaks.

A background threshold is the median, over random non-overlapping
background windows, of each window's upper-tail percentile of per-position
scores. Positions near each peak scoring strictly above it are hits; hit
vectors are summed across peaks, smoothed with a centered moving average
and divided by the hit count expected with no signal.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .energy import EnergyMatrix, relabel
from .seqcore import _LOOKUP, substream
from .validation import check_is_fitted

log = logging.getLogger(__name__)

UNSCORABLE = -np.inf
NULL_STREAM = 0xC41F


@dataclass(frozen=True)
class ChipConfig:
    n_peaks: int = 100
    half_window: int = 4000
    n_samples: int = 100
    alpha: float = 0.999
    smoothing: int = 201
    seed: int = 0

    def __post_init__(self):
        for name in ("n_peaks", "half_window", "n_samples", "smoothing"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly between 0 and 1")
        if self.smoothing % 2 == 0:
            raise ValueError("smoothing width must be odd so the window is centered")

    @property
    def upper_quantile(self) -> float:
        """Quantile level actually used: the upper tail whichever way alpha is given."""
        return 1.0 - self.alpha if self.alpha <= 0.5 else self.alpha


@dataclass
class Genome:
    """Named contigs as code arrays (``N`` and other ambiguity -> 255)."""

    contigs: dict
    excluded: list = field(default_factory=list)

    def __post_init__(self):
        codes = {}
        for name, seq in self.contigs.items():
            if isinstance(seq, np.ndarray):
                codes[name] = np.asarray(seq, dtype=np.uint8)
            else:
                codes[name] = _LOOKUP[np.frombuffer(seq.upper().encode("ascii"), dtype=np.uint8)]
        self.contigs = codes
        for contig, start, end, *_ in self.excluded:
            if contig not in self.contigs:
                raise ValueError(f"exclusion on unknown contig {contig!r}")
            if not 0 <= start < end <= len(self.contigs[contig]):
                raise ValueError(f"exclusion [{start}, {end}) outside contig {contig!r}")

    def __len__(self):
        return sum(len(c) for c in self.contigs.values())

    def excluded_mask(self, contig: str) -> np.ndarray:
        mask = np.zeros(len(self.contigs[contig]), dtype=bool)
        for name, start, end, *_ in self.excluded:
            if name == contig:
                mask[start:end] = True
        return mask


@dataclass
class EnrichmentProfile:
    positions: np.ndarray
    values: np.ndarray
    threshold: float
    null_hit_rate: float
    n_peaks_used: int
    config: ChipConfig
    hit_counts: np.ndarray | None = None


def position_scores(matrix: EnergyMatrix, codes: np.ndarray) -> np.ndarray:
    """Score of each window start: max of forward and reverse-strand site energies.

    Windows touching an unscorable base get ``-inf``. The output has
    ``len(codes) - l + 1`` entries.
    """
    codes = np.asarray(codes, dtype=np.uint8)
    l = matrix.l
    n = codes.size - l + 1
    if n < 1:
        raise ValueError(f"sequence of length {codes.size} shorter than site length {l}")
    bad = codes > 3
    safe = np.where(bad, 0, codes)
    fwd = np.zeros(n)
    rev = np.zeros(n)
    rc_matrix = relabel(matrix, "revcomp").values
    for p in range(l):
        col = safe[p:p + n]
        fwd += matrix.values[p, col]
        # the reverse-strand site read off positions i..i+l-1 scores like the
        # forward read under the reverse-complement relabeled matrix
        rev += rc_matrix[p, col]
    out = np.maximum(fwd, rev)
    if bad.any():
        hits_bad = np.convolve(bad.astype(np.int32), np.ones(l, dtype=np.int32), mode="valid") > 0
        out[hits_bad] = UNSCORABLE
    return out


def hit_vector(matrix: EnergyMatrix, window, threshold: float) -> np.ndarray:
    """1 where the window-start score is strictly above ``threshold``, else 0."""
    codes = _as_codes(window)
    return (position_scores(matrix, codes) > threshold).astype(np.int8)


def _as_codes(window) -> np.ndarray:
    if isinstance(window, np.ndarray):
        return window.astype(np.uint8, copy=False)
    return _LOOKUP[np.frombuffer(str(window).upper().encode("ascii"), dtype=np.uint8)]


def moving_average(v, width: int) -> np.ndarray:
    """Centered windowed mean over full windows only (output shorter by ``width - 1``)."""
    v = np.asarray(v, dtype=np.float64)
    if width < 1:
        raise ValueError("width must be positive")
    if width > v.size:
        raise ValueError(f"width {width} exceeds vector length {v.size}")
    c = np.concatenate([[0.0], np.cumsum(v)])
    return (c[width:] - c[:-width]) / width


def background_windows(genome: Genome, length: int, n: int, seed: int) -> list[tuple[str, int]]:
    """``n`` random non-overlapping windows clear of exclusions and ``N`` runs.

    Candidates are the tiles of a fixed ``length`` grid on each contig, in
    sorted contig order, so the draw does not depend on input ordering.
    """
    candidates = []
    for name in sorted(genome.contigs):
        codes = genome.contigs[name]
        blocked = genome.excluded_mask(name) | (codes > 3)
        n_tiles = codes.size // length
        if n_tiles == 0:
            continue
        tiles = blocked[: n_tiles * length].reshape(n_tiles, length).any(axis=1)
        candidates.extend((name, i * length) for i in np.flatnonzero(~tiles))
    if len(candidates) < n:
        raise ValueError(
            f"only {len(candidates)} background windows of {length} bp available, {n} requested"
        )
    rng = substream(seed, NULL_STREAM)
    pick = np.sort(rng.choice(len(candidates), size=n, replace=False))
    return [candidates[i] for i in pick]


def _background_scores(genome, matrix, config):
    length = 2 * config.half_window
    wins = background_windows(genome, length, config.n_samples, config.seed)
    return [position_scores(matrix, genome.contigs[c][s:s + length]) for c, s in wins]


def null_threshold(genome: Genome, matrix: EnergyMatrix, config: ChipConfig) -> float:
    """Median over background samples of each sample's upper-tail score percentile."""
    samples = _background_scores(genome, matrix, config)
    return _threshold_from(samples, config)


def _threshold_from(samples, config) -> float:
    q = config.upper_quantile
    per_sample = [np.quantile(s, q, method="lower") for s in samples]
    return float(np.median(per_sample))


def _null_rate(samples, threshold) -> float:
    total = sum(s.size for s in samples)
    hits = sum(int(np.count_nonzero(s > threshold)) for s in samples)
    return hits / total


def enrichment_profile(genome: Genome, peaks, matrix: EnergyMatrix, config: ChipConfig,
                       threshold: float | None = None) -> EnrichmentProfile:
    """Peak-aligned, smoothed, null-normalized hit rate.

    ``peaks`` are ``(contig, position[, score])``; the first ``n_peaks``
    after sorting by descending score (stable) are used. Peaks whose window
    falls off a contig are dropped with a warning. Normalization divides by
    ``n_used * p_null``, the expected hits per position under no signal,
    with ``p_null`` measured on the background samples at the threshold.
    """
    samples = _background_scores(genome, matrix, config)
    if threshold is None:
        threshold = _threshold_from(samples, config)
    p_null = _null_rate(samples, threshold)

    ranked = sorted(peaks, key=lambda p: (-(p[2] if len(p) > 2 else 0.0), p[0], p[1]))
    ranked = ranked[: config.n_peaks]
    w = config.half_window
    l = matrix.l
    span = 2 * w + 1
    counts = np.zeros(span, dtype=np.int64)
    used = 0
    for peak in ranked:
        contig, pos = peak[0], int(peak[1])
        codes = genome.contigs.get(contig)
        if codes is None:
            warnings.warn(f"peak on unknown contig {contig!r} dropped")
            continue
        start, stop = pos - w, pos + w + l
        if start < 0 or stop > codes.size:
            warnings.warn(f"peak {contig}:{pos} too close to contig end, dropped")
            continue
        counts += (position_scores(matrix, codes[start:stop]) > threshold)
        used += 1
    if used == 0:
        raise ValueError("no usable peaks")
    smoothed = moving_average(counts, config.smoothing)
    half = config.smoothing // 2
    positions = np.arange(-w + half, w - half + 1)
    expected = used * p_null
    values = smoothed / expected if expected > 0 else np.full_like(smoothed, np.inf)
    return EnrichmentProfile(positions, values, threshold, p_null, used, config, counts)


class EnrichmentProfiler(BaseEstimator):
    """Estimator wrapper: ``fit`` learns the background threshold, ``transform`` builds profiles."""

    def __init__(self, matrix=None, n_peaks=100, half_window=4000, n_samples=100,
                 alpha=0.999, smoothing=201, seed=0):
        self.matrix = matrix
        self.n_peaks = n_peaks
        self.half_window = half_window
        self.n_samples = n_samples
        self.alpha = alpha
        self.smoothing = smoothing
        self.seed = seed

    def _config(self) -> ChipConfig:
        return ChipConfig(self.n_peaks, self.half_window, self.n_samples, self.alpha,
                          self.smoothing, self.seed)

    def _matrix(self) -> EnergyMatrix:
        m = self.matrix
        if m is None:
            raise ValueError("matrix must be set")
        if hasattr(m, "matrix_"):
            return m.matrix_
        return m if isinstance(m, EnergyMatrix) else EnergyMatrix(m)

    def fit(self, genome: Genome, y=None):
        config = self._config()
        samples = _background_scores(genome, self._matrix(), config)
        self.threshold_ = _threshold_from(samples, config)
        self.null_hit_rate_ = _null_rate(samples, self.threshold_)
        self.genome_ = genome
        return self

    def transform(self, peaks) -> EnrichmentProfile:
        check_is_fitted(self, "threshold_")
        return enrichment_profile(self.genome_, peaks, self._matrix(), self._config(),
                                  threshold=self.threshold_)
