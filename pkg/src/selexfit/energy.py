"""Additive binding-energy matrices and best-site (implicit alignment) search.

Matrix entries are affinity contributions in units of ``R_Gas * T``: the
consensus base at every position scores 0 and deleterious substitutions
score negative. The Boltzmann weight of a site is ``exp(log_tf + energy)``,
and the site an oligonucleotide binds through is the window with the
*largest* energy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .seqcore import (
    ALPHABET,
    FORWARD,
    REVERSE,
    Sequence,
    encode,
    encode_many,
    revcomp_codes,
)

RELABELINGS = ("identity", "reverse", "complement", "revcomp")

# Gas constant in kcal / (mol K); only used to convert at I/O boundaries.
R_GAS_KCAL = 1.98720425864083e-3

BICOID_REFERENCE = np.array(
    [
        [-4.722516, -5.729347, 0.000000, -6.251779],
        [-7.447426, -5.981440, 0.000000, -16.853690],
        [0.000000, -6.946246, -15.701235, -8.529272],
        [-7.746046, -15.548042, -12.535315, 0.000000],
        [-7.989755, -7.201358, -24.708969, 0.000000],
        [0.000000, -9.611195, -8.497223, -5.336888],
        [-0.505663, -19.926999, 0.000000, -4.445374],
        [-1.836787, -0.228140, 0.000000, -0.945140],
        [-1.841359, -1.612913, 0.000000, -1.417988],
        [-1.431632, -1.539663, 0.000000, -0.235633],
    ]
)


@dataclass(frozen=True, eq=False)
class EnergyMatrix:
    """``l x 4`` table of per-position base energies, columns ordered A, C, G, T."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 4:
            raise ValueError(f"energy matrix must have shape (l, 4), got {v.shape}")
        if v.shape[0] < 1:
            raise ValueError("energy matrix needs at least one position")
        if not np.all(np.isfinite(v)):
            raise ValueError("energy matrix entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def l(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.l

    def __eq__(self, other):
        if not isinstance(other, EnergyMatrix):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(np.all(self.values == other.values))

    def __hash__(self):
        return hash(self.values.tobytes())

    def __repr__(self):
        return f"EnergyMatrix(l={self.l})"

    @classmethod
    def zeros(cls, l: int) -> "EnergyMatrix":
        return cls(np.zeros((l, 4)))

    @classmethod
    def bicoid(cls) -> "EnergyMatrix":
        """The published Bicoid matrix, consensus GGATTAGGGG."""
        return cls(BICOID_REFERENCE)

    def to_physical(self, temperature: float) -> np.ndarray:
        """Entries in kcal/mol as free energies (``dG = -energy * R * T``)."""
        return -self.values * R_GAS_KCAL * temperature

    @classmethod
    def from_physical(cls, dg: np.ndarray, temperature: float) -> "EnergyMatrix":
        return cls(-np.asarray(dg, dtype=np.float64) / (R_GAS_KCAL * temperature))


@dataclass(frozen=True)
class SiteScore:
    site: Sequence
    offset: int
    strand: str
    energy: float


def _as_matrix(m) -> EnergyMatrix:
    return m if isinstance(m, EnergyMatrix) else EnergyMatrix(m)


def delta_g(m: EnergyMatrix, site: str) -> float:
    """Additive energy of a site: the sum of one matrix entry per position."""
    m = _as_matrix(m)
    codes = encode(Sequence(site))
    if codes.size != m.l:
        raise ValueError(f"site length {codes.size} does not match matrix length {m.l}")
    return float(m.values[np.arange(m.l), codes].sum())


def window_energies(m: EnergyMatrix, s: str) -> np.ndarray:
    """Energies of all windows of ``s`` in :func:`~selexfit.seqcore.windows` order."""
    m = _as_matrix(m)
    codes = encode(Sequence(s))
    k, l = codes.size, m.l
    if l > k:
        raise ValueError(f"matrix length {l} exceeds sequence length {k}")
    nw = k - l + 1
    rows = np.arange(l)
    fwd = np.lib.stride_tricks.sliding_window_view(codes, l)
    rev = np.lib.stride_tricks.sliding_window_view(revcomp_codes(codes), l)
    out = np.empty(2 * nw)
    out[:nw] = m.values[rows, fwd].sum(axis=1)
    out[nw:] = m.values[rows, rev].sum(axis=1)
    return out


def best_site(m: EnergyMatrix, s: str) -> SiteScore:
    """Highest-energy window of ``s`` over both strands.

    Ties go to the forward strand, then to the smallest offset.
    """
    m = _as_matrix(m)
    s = Sequence(s)
    energies = window_energies(m, s)
    w = int(np.argmax(energies))
    nw = len(s) - m.l + 1
    if w < nw:
        site, offset, strand = s[w:w + m.l], w, FORWARD
    else:
        offset = w - nw
        rc = s.translate(str.maketrans("ACGT", "TGCA"))[::-1]
        site, strand = rc[offset:offset + m.l], REVERSE
    return SiteScore(Sequence(site), offset, strand, float(energies[w]))


def best_site_energies(m: EnergyMatrix, seqs) -> np.ndarray:
    """Vectorized best-site energies for equal-length sequences or code rows."""
    m = _as_matrix(m)
    if isinstance(seqs, np.ndarray) and seqs.dtype == np.uint8:
        codes = seqs
    else:
        codes = encode_many([Sequence(s) for s in seqs])
    if codes.shape[0] == 0:
        return np.zeros(0)
    if m.l > codes.shape[1]:
        raise ValueError(f"matrix length {m.l} exceeds sequence length {codes.shape[1]}")
    energies, _ = _kernels.best_from_codes(codes, m.values)
    return energies


def normalize_ddg(m: EnergyMatrix, return_shift: bool = False):
    """Shift every row so its maximum is exactly 0 (relative energies).

    With ``return_shift=True`` also returns the total removed shift, i.e. the
    energy the consensus site had before normalization.
    """
    m = _as_matrix(m)
    row_max = m.values.max(axis=1)
    # + 0.0 turns -0.0 into 0.0 so printed tables never show "-0.000000"
    out = EnergyMatrix(m.values - row_max[:, None] + 0.0)
    if return_shift:
        return out, float(row_max.sum())
    return out


def consensus(m: EnergyMatrix) -> Sequence:
    """Per-position highest-energy base, ties resolved alphabetically."""
    m = _as_matrix(m)
    return Sequence("".join(ALPHABET[i] for i in np.argmax(m.values, axis=1)))


def consensus_names(m: EnergyMatrix) -> dict[str, Sequence]:
    """Consensus read under each of the four relabelings of the matrix."""
    m = _as_matrix(m)
    return {name: consensus(relabel(m, name)) for name in RELABELINGS}


def canonical_consensus(m: EnergyMatrix) -> Sequence:
    """Alphabetically first of the four consensus names."""
    return min(consensus_names(m).values())


def relabel(m: EnergyMatrix, naming: str) -> EnergyMatrix:
    """Rename the matrix under one of the double-strand symmetries.

    ``reverse`` reverses row order, ``complement`` swaps columns A<->T and
    C<->G, ``revcomp`` does both. Only ``identity`` and ``revcomp`` preserve
    best-site energies of every sequence; ``reverse`` (``complement``) scores
    ``s`` the way the original scores ``reverse(s)`` (``complement(s)``).
    """
    m = _as_matrix(m)
    v = m.values
    if naming == "identity":
        return m
    if naming == "reverse":
        return EnergyMatrix(v[::-1])
    if naming == "complement":
        return EnergyMatrix(v[:, ::-1])
    if naming == "revcomp":
        return EnergyMatrix(v[::-1, ::-1])
    raise ValueError(f"unknown relabeling {naming!r}; expected one of {RELABELINGS}")


def canonical_orientation(m: EnergyMatrix) -> tuple[EnergyMatrix, bool]:
    """Pick the strand orientation whose consensus is alphabetically first.

    Chooses between ``m`` and its reverse-complement relabeling (the two
    namings that leave the likelihood unchanged). Palindromic consensus ties
    fall back to comparing the flattened entries. Returns the chosen matrix
    and whether it was flipped.
    """
    m = _as_matrix(m)
    rc = relabel(m, "revcomp")
    key_m = (consensus(m), tuple(m.values.ravel()))
    key_rc = (consensus(rc), tuple(rc.values.ravel()))
    if key_rc < key_m:
        return rc, True
    return m, False
