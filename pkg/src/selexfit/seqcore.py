"""DNA sequence primitives: parsing, strand symmetry, windows and random pools.

Bases are encoded as 2-bit integers ``A=0, C=1, G=2, T=3`` so that the
complement of code ``c`` is ``3 - c`` and integer order matches the
alphabetical order used for canonical choices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

ALPHABET = "ACGT"
FORWARD = "forward"
REVERSE = "reverse"

_COMPLEMENT = str.maketrans("ACGT", "TGCA")
_LOOKUP = np.full(256, 255, dtype=np.uint8)
for _i, _b in enumerate(ALPHABET):
    _LOOKUP[ord(_b)] = _i
    _LOOKUP[ord(_b.lower())] = _i

# number of k-mers generated per RNG substream in random_pool
POOL_CHUNK = 1 << 16
MAX_PACKED_K = 31


class SequenceError(ValueError):
    """Raised for text that is not a valid A/C/G/T sequence."""

    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


class Sequence(str):
    """Upper-case DNA string over ``{A, C, G, T}``.

    Construction validates and normalizes case; anything else (including
    ``N``) raises :class:`SequenceError` naming the 1-based position of the
    first offending character.
    """

    __slots__ = ()

    def __new__(cls, text):
        if isinstance(text, Sequence):
            return text
        if not isinstance(text, str):
            raise TypeError(f"expected str, got {type(text).__name__}")
        if not text:
            raise SequenceError("empty sequence")
        upper = text.upper()
        if upper.strip("ACGT"):
            for pos, ch in enumerate(upper, start=1):
                if ch not in ALPHABET:
                    raise SequenceError(
                        f"invalid base {text[pos - 1]!r} at position {pos}", position=pos
                    )
        return super().__new__(cls, upper)

    @property
    def k(self) -> int:
        return len(self)

    def codes(self) -> np.ndarray:
        return encode(self)


def parse_sequence(text: str) -> Sequence:
    """Parse and validate a DNA string (case-insensitive)."""
    return Sequence(text)


def reverse_complement(s: str) -> Sequence:
    return Sequence(str(s).translate(_COMPLEMENT)[::-1])


def complement(s: str) -> Sequence:
    return Sequence(str(s).translate(_COMPLEMENT))


def reverse(s: str) -> Sequence:
    return Sequence(str(s)[::-1])


def four_names(s: str) -> set[Sequence]:
    """The four readings of a double-stranded segment.

    Contains ``s``, its reverse, its complement and its reverse complement;
    symmetric inputs collapse to fewer distinct members.
    """
    s = Sequence(s)
    return {s, reverse(s), complement(s), reverse_complement(s)}


def canonical_type(s: str) -> Sequence:
    """Lexicographically smaller of ``s`` and its reverse complement."""
    s = Sequence(s)
    return min(s, reverse_complement(s))


class Window(NamedTuple):
    site: Sequence
    offset: int
    strand: str


def windows(s: str, l: int) -> list[Window]:
    """All length-``l`` windows on both strands.

    Forward windows come first in ascending offset, then the windows of the
    reverse complement in ascending offset (offsets index the reverse
    complement string itself).
    """
    s = Sequence(s)
    k = len(s)
    if l < 1:
        raise ValueError(f"window length must be >= 1, got {l}")
    if l > k:
        raise ValueError(f"window length {l} exceeds sequence length {k}")
    rc = reverse_complement(s)
    out = [Window(Sequence(s[o:o + l]), o, FORWARD) for o in range(k - l + 1)]
    out += [Window(Sequence(rc[o:o + l]), o, REVERSE) for o in range(k - l + 1)]
    return out


def count_distinct_types(k: int) -> int:
    """Type count ``2**(k-1) + 4**(k-1)`` as quoted for double-stranded k-mers.

    This is the published formula evaluated literally. It differs from the
    reverse-complement class count for small ``k``; see
    :func:`count_revcomp_classes` for the enumerated value.
    """
    k = _check_k(k)
    return 2 ** (k - 1) + 4 ** (k - 1)


def count_distinct_types_int64(k: int) -> int:
    """Same as :func:`count_distinct_types` but constrained to a signed 64-bit result."""
    n = count_distinct_types(k)
    if n > np.iinfo(np.int64).max:
        raise OverflowError(f"type count for k={k} does not fit in int64")
    return n


def count_revcomp_classes(k: int) -> int:
    """Closed-form number of reverse-complement classes ``(4**k + p) / 2``.

    ``p`` counts reverse-complement palindromes: ``4**(k/2)`` for even ``k``,
    none for odd ``k``.
    """
    k = _check_k(k)
    p = 4 ** (k // 2) if k % 2 == 0 else 0
    return (4 ** k + p) // 2


def brute_force_class_count(k: int) -> int:
    """Enumerate all ``4**k`` strings and count distinct canonical types."""
    k = _check_k(k)
    if 4 ** k > 10 ** 7:
        raise ValueError(f"k={k} too large to enumerate")
    keys = np.arange(4 ** k, dtype=np.int64)
    return int(np.count_nonzero(keys <= revcomp_keys(keys, k)))


def _check_k(k) -> int:
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    return int(k)


# -- integer encodings --------------------------------------------------------


def encode(s: str) -> np.ndarray:
    """Encode letters to a ``uint8`` code array; raises on non-ACGT input."""
    raw = np.frombuffer(str(s).encode("ascii"), dtype=np.uint8)
    codes = _LOOKUP[raw]
    bad = np.flatnonzero(codes == 255)
    if bad.size:
        pos = int(bad[0]) + 1
        raise SequenceError(f"invalid base {str(s)[pos - 1]!r} at position {pos}", position=pos)
    return codes


def encode_many(seqs) -> np.ndarray:
    """Encode equal-length sequences into an ``(n, k)`` ``uint8`` array."""
    seqs = list(seqs)
    if not seqs:
        return np.zeros((0, 0), dtype=np.uint8)
    k = len(seqs[0])
    if any(len(s) != k for s in seqs):
        raise ValueError("sequences must share a common length")
    joined = "".join(seqs)
    return encode(joined).reshape(len(seqs), k)


def decode(codes) -> Sequence:
    return Sequence("".join(ALPHABET[c] for c in np.asarray(codes).tolist()))


def decode_many(codes: np.ndarray) -> list[str]:
    codes = np.asarray(codes, dtype=np.uint8)
    letters = np.frombuffer(ALPHABET.encode("ascii"), dtype=np.uint8)[codes]
    return [row.tobytes().decode("ascii") for row in letters]


def pack(codes: np.ndarray) -> np.ndarray:
    """Pack ``(n, k)`` codes into integer keys whose order is lexicographic."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    k = codes.shape[1]
    if k > MAX_PACKED_K:
        raise ValueError(f"cannot pack k={k} > {MAX_PACKED_K}")
    weights = 4 ** np.arange(k - 1, -1, -1, dtype=np.int64)
    return codes @ weights


def unpack(keys, k: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    shifts = 2 * np.arange(k - 1, -1, -1, dtype=np.int64)
    return ((keys[:, None] >> shifts) & 3).astype(np.uint8)


def revcomp_codes(codes: np.ndarray) -> np.ndarray:
    return (3 - np.asarray(codes, dtype=np.uint8))[..., ::-1]


def revcomp_keys(keys, k: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.zeros_like(keys)
    x = keys.copy()
    for _ in range(k):
        out = (out << 2) | (3 - (x & 3))
        x >>= 2
    return out


def canonical_keys(keys, k: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    return np.minimum(keys, revcomp_keys(keys, k))


# -- pools --------------------------------------------------------------------


@dataclass(frozen=True)
class SequencePool:
    """Multiset of equal-length molecules stored as type -> multiplicity.

    ``keys`` are packed codes (see :func:`pack`) in strictly increasing order,
    ``counts`` the matching non-negative multiplicities.
    """

    keys: np.ndarray
    counts: np.ndarray
    k: int

    def __post_init__(self):
        keys = np.asarray(self.keys, dtype=np.int64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if keys.shape != counts.shape or keys.ndim != 1:
            raise ValueError("keys and counts must be 1-d arrays of equal length")
        if counts.size and counts.min() < 0:
            raise ValueError("multiplicities must be non-negative")
        if keys.size > 1 and np.any(np.diff(keys) <= 0):
            raise ValueError("pool keys must be strictly increasing")
        keys.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_keys(cls, keys, k: int, counts=None) -> "SequencePool":
        """Aggregate (possibly repeated) keys into a pool, dropping zero counts."""
        keys = np.asarray(keys, dtype=np.int64)
        if counts is None:
            uniq, cnt = np.unique(keys, return_counts=True)
        else:
            counts = np.asarray(counts, dtype=np.int64)
            uniq, inv = np.unique(keys, return_inverse=True)
            cnt = np.bincount(inv, weights=counts, minlength=uniq.size).astype(np.int64)
        keep = cnt > 0
        return cls(uniq[keep], cnt[keep], k)

    @classmethod
    def from_sequences(cls, seqs, counts=None) -> "SequencePool":
        seqs = [Sequence(s) for s in seqs]
        if not seqs:
            raise ValueError("empty pool")
        codes = encode_many(seqs)
        return cls.from_keys(pack(codes), codes.shape[1], counts)

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    @property
    def n_types(self) -> int:
        return int(self.keys.size)

    def __len__(self) -> int:
        return self.size

    def codes(self) -> np.ndarray:
        return unpack(self.keys, self.k)

    def sequences(self) -> list[str]:
        return decode_many(self.codes())

    def items(self) -> Iterator[tuple[str, int]]:
        return zip(self.sequences(), self.counts.tolist())

    def as_dict(self) -> dict[str, int]:
        return dict(self.items())


def substream(*key: int) -> np.random.Generator:
    """Independent generator derived from an integer key tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(x) for x in key]))


def random_codes(count: int, k: int, seed: int, stream: tuple = ()) -> np.ndarray:
    """``(count, k)`` i.i.d. uniform base codes, generated chunk by chunk.

    Each chunk of :data:`POOL_CHUNK` rows draws from its own substream keyed
    by ``(seed, *stream, chunk_index)``, so the output does not depend on how
    chunks are scheduled.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    k = _check_k(k)
    out = np.empty((count, k), dtype=np.uint8)
    for c, start in enumerate(range(0, count, POOL_CHUNK)):
        stop = min(start + POOL_CHUNK, count)
        rng = substream(seed, *stream, c)
        out[start:stop] = rng.integers(0, 4, size=(stop - start, k), dtype=np.uint8)
    return out


def random_pool(count: int, k: int, seed: int) -> SequencePool:
    """Pool of ``count`` uniform random ``k``-mers, reproducible from ``seed``."""
    codes = random_codes(count, k, seed)
    return SequencePool.from_keys(pack(codes), k)
