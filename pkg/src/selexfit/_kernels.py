"""Compiled inner loops for window scoring and round-weight sums.

Window energies are evaluated through per-chunk lookup tables: the ``l``
positions of a site are split into chunks of at most ``CHUNK`` bases, each
chunk's bases form a base-4 index, and the site energy is the sum of one
table entry per chunk. Tables are rebuilt from the matrix on every call,
which costs ``O(4**CHUNK)`` and is negligible next to the scan.
"""

from __future__ import annotations

import numba
import numpy as np

CHUNK = 5


def chunk_bounds(l: int) -> list[tuple[int, int]]:
    return [(s, min(s + CHUNK, l)) for s in range(0, l, CHUNK)]


def chunk_tables(matrix: np.ndarray) -> np.ndarray:
    """``(n_chunks, 4**CHUNK)`` table of partial site energies."""
    l = matrix.shape[0]
    bounds = chunk_bounds(l)
    out = np.zeros((len(bounds), 4 ** CHUNK), dtype=np.float64)
    for c, (start, stop) in enumerate(bounds):
        size = stop - start
        idx = np.arange(4 ** size)
        total = np.zeros(4 ** size)
        for p in range(size):
            digit = (idx >> (2 * (size - 1 - p))) & 3
            total += matrix[start + p, digit]
        out[c, : 4 ** size] = total
    return out


@numba.njit(cache=True)
def _window_index(codes, l, n_chunks):
    n, k = codes.shape
    nw = k - l + 1
    out = np.empty((n, 2 * nw, n_chunks), dtype=np.uint16)
    for i in range(n):
        for o in range(nw):
            for c in range(n_chunks):
                start = c * CHUNK
                stop = min(start + CHUNK, l)
                f = 0
                r = 0
                for p in range(start, stop):
                    f = f * 4 + codes[i, o + p]
                    # reverse-complement strand, window at offset o of the rc string
                    r = r * 4 + (3 - codes[i, k - 1 - (o + p)])
                out[i, o, c] = f
                out[i, nw + o, c] = r
    return out


def window_index(codes: np.ndarray, l: int) -> np.ndarray:
    """Chunk indices ``(n, 2*(k-l+1), n_chunks)`` for every window of every row.

    Window order matches :func:`selexfit.seqcore.windows`: forward offsets
    ascending, then reverse-complement offsets ascending.
    """
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    return _window_index(codes, int(l), len(chunk_bounds(l)))


@numba.njit(cache=True)
def best_from_index(index, tables):
    n, nw, nc = index.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        best = -np.inf
        for w in range(nw):
            e = 0.0
            for c in range(nc):
                e += tables[c, index[i, w, c]]
            if e > best:
                best = e
        out[i] = best
    return out


@numba.njit(cache=True)
def _best_from_codes(codes, tables, l):
    n, k = codes.shape
    nw = k - l + 1
    nc = tables.shape[0]
    out = np.empty(n, dtype=np.float64)
    arg = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = -np.inf
        best_w = 0
        for strand in range(2):
            for o in range(nw):
                e = 0.0
                for c in range(nc):
                    start = c * CHUNK
                    stop = min(start + CHUNK, l)
                    j = 0
                    for p in range(start, stop):
                        if strand == 0:
                            j = j * 4 + codes[i, o + p]
                        else:
                            j = j * 4 + (3 - codes[i, k - 1 - (o + p)])
                    e += tables[c, j]
                # strict '>' keeps the first maximal window in scan order
                if e > best:
                    best = e
                    best_w = strand * nw + o
        out[i] = best
        arg[i] = best_w
    return out, arg


def best_from_codes(codes: np.ndarray, matrix: np.ndarray):
    """Best-window energies and window indices for ``(n, k)`` code rows."""
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    return _best_from_codes(codes, chunk_tables(matrix), matrix.shape[0])


@numba.njit(cache=True)
def round_weight_sums(energies, weights, neg_exp_log_tf, c_junk):
    """Sums over samples of ``weight * prod_{r<=rbar} t_r`` for every ``rbar``.

    ``t_r = 1 / (1 + exp(-log_tf_r) * exp(-energy))`` mixed with the junk
    constant. Runs in linear space; callers fall back to the log-space path
    when the result under- or overflows.
    """
    n = energies.shape[0]
    R = neg_exp_log_tf.shape[0]
    out = np.zeros(R, dtype=np.float64)
    for i in range(n):
        g = np.exp(-energies[i])
        prod = weights[i]
        for r in range(R):
            t = 1.0 / (1.0 + neg_exp_log_tf[r] * g)
            t = (1.0 - c_junk) * t + c_junk
            prod *= t
            out[r] += prod
    return out
