"""Row-selection machinery: seeded streams, simple random sampling, score-based
top-k selection, uniform partitions, and norm-weighted row/block sampling.

Index sets are sorted 1-D int64 numpy arrays throughout; the tie-break for
equal scores is always the smaller row index so runs replay exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .matrix import ProblemMatrix, residual_on

__all__ = [
    "RngStream",
    "Partition",
    "sample_size",
    "simple_random_sample",
    "score_rows",
    "top_k",
    "uniform_partition",
    "sample_block",
    "sample_row_by_norm",
]


class RngStream:
    """Deterministic random stream owned by exactly one solver run.

    Wraps a PCG64 generator; the same seed yields the same draw sequence on
    every platform. ``position`` counts draw calls, for debugging replays.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self.position = 0

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        self.position += 1
        return int(self._gen.integers(low, high))

    def random(self) -> float:
        """Uniform float in [0, 1)."""
        self.position += 1
        return float(self._gen.random())

    def standard_normal(self, shape) -> np.ndarray:
        self.position += 1
        return self._gen.standard_normal(shape)

    def __repr__(self):
        return f"RngStream(algorithm={self.algorithm!r}, seed={self.seed}, position={self.position})"


def sample_size(m: int, eta: float) -> int:
    """ceil(eta * m) with a guard against float round-up (0.05 * 100 -> 5, not 6)."""
    return min(m, max(1, int(math.ceil(eta * m - 1e-9))))


def simple_random_sample(m: int, eta: float, rng: RngStream) -> np.ndarray:
    """Draw ceil(eta*m) distinct row indices uniformly, sorted ascending.

    Partial Fisher-Yates over a virtual [0, m) array, so cost is O(sample
    size) regardless of m.
    """
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    if m < 1:
        raise ValueError("m must be >= 1")
    k = sample_size(m, eta)
    swap: dict[int, int] = {}
    out = np.empty(k, dtype=np.int64)
    for i in range(k):
        j = rng.integer(i, m)
        ai = swap.get(i, i)
        aj = swap.get(j, j)
        out[i] = aj
        swap[j] = ai
        swap[i] = aj
    out.sort()
    return out


def score_rows(A: ProblemMatrix, b: np.ndarray, x: np.ndarray, idx) -> np.ndarray:
    """Normalized residual scores |b_i - A_(i) x| / ||A_(i)|| for i in idx.

    Zero-norm rows score 0: they carry no constraint and selecting one would
    waste an iteration.
    """
    r = residual_on(A, b, x, idx)
    norms = A.row_norms[np.asarray(idx, dtype=np.int64)]
    out = np.zeros(r.size)
    np.divide(np.abs(r), norms, out=out, where=norms > 0)
    return out


def top_k(scores: np.ndarray, idx, k: int) -> np.ndarray:
    """Row indices of the k largest scores within idx, sorted ascending.

    k is capped at |idx|; ties at the selection boundary go to the smaller
    row index. Selection uses a partial partition rather than a full sort.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    idx = np.asarray(idx, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size != idx.size:
        raise ValueError("scores and idx must have equal length")
    n = idx.size
    if k >= n:
        return np.sort(idx)
    kth = np.partition(scores, n - k)[n - k]
    above = scores > kth
    chosen = idx[above]
    need = k - chosen.size
    if need > 0:
        boundary = np.sort(idx[scores == kth])
        chosen = np.concatenate([chosen, boundary[:need]])
    chosen.sort()
    return chosen


@dataclass(frozen=True)
class Partition:
    """Disjoint row blocks tiling [0, m); optionally carries per-block weights."""

    blocks: tuple[np.ndarray, ...]
    block_frob_sq: np.ndarray | None = field(default=None)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def with_block_norms(self, A: ProblemMatrix) -> "Partition":
        """Attach per-block squared Frobenius norms computed from A."""
        w = np.array([A.row_norms_sq[blk].sum() for blk in self.blocks])
        return Partition(self.blocks, w)


def uniform_partition(m: int, n_r: int) -> Partition:
    """Contiguous blocks of n_r consecutive rows; the last block may be smaller."""
    if not 1 <= n_r <= m:
        raise ValueError(f"block size must be in [1, {m}], got {n_r}")
    p = (m + n_r - 1) // n_r
    blocks = tuple(
        np.arange(i * n_r, min((i + 1) * n_r, m), dtype=np.int64) for i in range(p)
    )
    return Partition(blocks)


def _weighted_index(cum_weights: np.ndarray, total: float, rng: RngStream) -> int:
    u = rng.random() * total
    i = int(np.searchsorted(cum_weights, u, side="right"))
    return min(i, cum_weights.size - 1)


def sample_block(P: Partition, frob_sq_total: float, rng: RngStream) -> int:
    """Draw a block index with probability proportional to its squared Frobenius norm."""
    if P.block_frob_sq is None:
        raise ValueError("partition has no block weights; call with_block_norms first")
    if frob_sq_total <= 0.0 or not np.any(P.block_frob_sq > 0):
        raise ValueError("all block weights are zero")
    cum = np.cumsum(P.block_frob_sq)
    return _weighted_index(cum, frob_sq_total, rng)


def sample_row_by_norm(A: ProblemMatrix, rng: RngStream) -> int:
    """Draw a row index with probability ||A_(i)||^2 / ||A||_F^2."""
    if A.frob_sq <= 0.0:
        raise ValueError("cannot sample rows of an all-zero matrix")
    cum = np.cumsum(A.row_norms_sq)
    return _weighted_index(cum, A.frob_sq, rng)
