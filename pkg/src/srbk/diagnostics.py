"""Desk-scale verification of the per-iteration contraction bounds.

The bound factors below cap the squared-error ratio of one block step. They
are only meaningful at sizes where a dense SVD is cheap; large benchmark
runs skip them. Violations are recorded with their slack, never raised:
whether some of these inequalities hold at all is part of what this module
measures.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .matrix import ProblemMatrix, singular_values
from .sampling import Partition, RngStream
from .solvers import (
    ConfigError,
    IterateState,
    SolverConfig,
    res_metric,
    step_srbk_full,
    step_srbk_sampled,
)

__all__ = [
    "BoundRecord",
    "BoundReport",
    "DegenerateBlockError",
    "contraction_factor_alg3",
    "contraction_factor_alg4",
    "contraction_factor_multirhs",
    "rbk_reference_factor",
    "verify_trajectory_bound",
]

DIAGNOSTICS_DIM_CAP = 2000


class DegenerateBlockError(ValueError):
    """The bound's denominator vanishes (the block exhausts its reference matrix)."""


@dataclass(frozen=True)
class BoundRecord:
    t: int
    ratio: float
    bound: float
    satisfied: bool
    slack: float


@dataclass
class BoundReport:
    """Per-iteration bound checks plus a violation summary."""

    records: list[BoundRecord] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(1 for r in self.records if not r.satisfied)

    @property
    def max_slack(self) -> float:
        if not self.records:
            return float("nan")
        return max(r.slack for r in self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "ratio", "bound", "satisfied", "slack"])
            for r in self.records:
                writer.writerow([r.t, repr(r.ratio), repr(r.bound), r.satisfied, repr(r.slack)])


def _dense_checked(M: np.ndarray | ProblemMatrix, idx=None) -> np.ndarray:
    dense = M.to_dense() if isinstance(M, ProblemMatrix) else np.asarray(M, dtype=np.float64)
    if idx is not None:
        dense = dense[np.asarray(idx, dtype=np.int64)]
    if min(dense.shape) > DIAGNOSTICS_DIM_CAP:
        raise ValueError(
            f"matrix of shape {dense.shape} exceeds the diagnostics size cap"
        )
    return dense


def sigma_min_for_bound(M) -> float:
    """Smallest singular value as the bounds use it.

    Returns the smallest nonzero singular value, except that a matrix whose
    numerical rank falls short of min(dims) gets 0: no progress is guaranteed
    through a rank-deficient reference matrix.
    """
    svals = singular_values(M)
    thresh = svals[0] * max(np.shape(M)) * 1e-12
    nonzero = svals[svals > thresh]
    if nonzero.size < min(np.shape(M)):
        return 0.0
    return float(nonzero[-1])


def _factor(frob_block: float, frob_ref: float, smin_sq: float, smax_block_sq: float) -> float:
    denom = frob_ref - frob_block
    if denom <= 0.0:
        raise DegenerateBlockError(
            "block squared Frobenius norm reaches the reference matrix's; bound undefined"
        )
    if smax_block_sq == 0.0:
        return 1.0
    return 1.0 - (frob_block / denom) * (smin_sq / smax_block_sq)


def contraction_factor_alg3(A: ProblemMatrix, block, *, sigma_min_sq: float | None = None) -> float:
    """Squared-error contraction cap for one full-scan top-k block step."""
    block = np.asarray(block, dtype=np.int64)
    if sigma_min_sq is None:
        sigma_min_sq = sigma_min_for_bound(_dense_checked(A)) ** 2
    frob_block = float(A.row_norms_sq[block].sum())
    _, smax = _spectral_of_block(A, block)
    return _factor(frob_block, A.frob_sq, sigma_min_sq, smax**2)


def contraction_factor_alg4(A: ProblemMatrix, omega, block, *,
                            sigma_min_sq: float | None = None) -> float:
    """Same cap with the sampled row submatrix as the reference matrix."""
    omega = np.asarray(omega, dtype=np.int64)
    block = np.asarray(block, dtype=np.int64)
    if sigma_min_sq is None:
        sigma_min_sq = sigma_min_for_bound(_dense_checked(A, omega)) ** 2
    frob_omega = float(A.row_norms_sq[omega].sum())
    frob_block = float(A.row_norms_sq[block].sum())
    _, smax = _spectral_of_block(A, block)
    return _factor(frob_block, frob_omega, sigma_min_sq, smax**2)


def contraction_factor_multirhs(A: ProblemMatrix, omega) -> float:
    """Expected squared-error contraction cap for one shared-sample multi-RHS step."""
    omega = np.asarray(omega, dtype=np.int64)
    if omega.size == 0:
        raise ValueError("empty sampled row set")
    sub = _dense_checked(A, omega)
    smin = sigma_min_for_bound(sub)
    frob = float(A.row_norms_sq[omega].sum())
    if frob == 0.0:
        raise DegenerateBlockError("sampled rows are all zero")
    return 1.0 - smin**2 / frob


def rbk_reference_factor(A: ProblemMatrix, P: Partition) -> float:
    """Partition-sampling contraction cap 1 - sigma_min^2(A) / (m * max_block sigma_max^2)."""
    smin = sigma_min_for_bound(_dense_checked(A))
    worst = max(_spectral_of_block(A, blk)[1] for blk in P.blocks)
    if worst == 0.0:
        return 1.0
    return 1.0 - smin**2 / (A.n_rows * worst**2)


def _spectral_of_block(A: ProblemMatrix, block: np.ndarray) -> tuple[float, float]:
    if block.size == 1:
        norm = float(A.row_norms[block[0]])
        return norm, norm
    sub = A.rows_dense(block)
    svals = singular_values(sub)
    return float(svals[-1]), float(svals[0])


def verify_trajectory_bound(A: ProblemMatrix, b, x_star, cfg: SolverConfig,
                            seeds, *, slack_tol: float = 1e-9) -> BoundReport:
    """Run the full-scan or sampled block method and check each step's bound.

    For every iteration of every seeded run, records the observed squared
    error ratio against the applicable contraction cap (the sampled variant
    uses the row set actually drawn). Iterations with no usable bound (the
    block equals the whole sample, or a stagnant step) are skipped.
    """
    if cfg.method not in ("srbk_full", "srbk"):
        raise ConfigError("bound verification applies to the srbk_full and srbk methods")
    b = np.asarray(b, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    report = BoundReport()
    sigma_min_sq_full = sigma_min_for_bound(_dense_checked(A)) ** 2
    for seed in seeds:
        run_cfg = replace(cfg, seed=int(seed))
        rng = RngStream(run_cfg.seed)
        state = IterateState(np.zeros(A.n_cols), 0)
        err_sq = float((state.x - x_star) @ (state.x - x_star))
        for _ in range(run_cfg.max_iter):
            if err_sq == 0.0 or res_metric(state.x, x_star) < run_cfg.tol:
                break
            if run_cfg.method == "srbk_full":
                state, block = step_srbk_full(A, b, state, run_cfg)
                omega = None
            else:
                state, omega, block = step_srbk_sampled(A, b, state, run_cfg, rng)
            new_err_sq = float((state.x - x_star) @ (state.x - x_star))
            if block is None:
                err_sq = new_err_sq
                continue
            try:
                if omega is None:
                    bound = contraction_factor_alg3(A, block, sigma_min_sq=sigma_min_sq_full)
                else:
                    if block.size == omega.size:
                        err_sq = new_err_sq
                        continue
                    bound = contraction_factor_alg4(A, omega, block)
            except DegenerateBlockError:
                err_sq = new_err_sq
                continue
            ratio = new_err_sq / err_sq
            slack = ratio - bound
            report.records.append(
                BoundRecord(state.t, ratio, bound, slack <= slack_tol, slack)
            )
            err_sq = new_err_sq
    return report
