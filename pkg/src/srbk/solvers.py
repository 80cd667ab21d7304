"""Single right-hand-side iterative solvers.

One-step kernels for the full method family (cyclic and randomized single-row
steps, partition-based block steps, greedy residual blocks, and the sampled
top-k block steps) plus a common driver loop with two stopping rules:
squared relative error against a known solution, or relative residual.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .matrix import ProblemMatrix, apply_block_pinv, as_vector, residual_on
from .sampling import (
    Partition,
    RngStream,
    sample_block,
    sample_row_by_norm,
    sample_size,
    score_rows,
    simple_random_sample,
    top_k,
    uniform_partition,
)

logger = logging.getLogger(__name__)

METHODS = ("k", "rk", "srk", "rbk", "gbk", "rabk", "srbk_full", "srbk")
ERROR_VS_KNOWN = "error_vs_known"
RELATIVE_RESIDUAL = "relative_residual"
STOPPING_MODES = (ERROR_VS_KNOWN, RELATIVE_RESIDUAL)

CONVERGED = "converged"
MAX_ITER = "max_iter"
DIVERGED = "diverged"

__all__ = [
    "METHODS",
    "ERROR_VS_KNOWN",
    "RELATIVE_RESIDUAL",
    "CONVERGED",
    "MAX_ITER",
    "DIVERGED",
    "ConfigError",
    "SolverConfig",
    "IterateState",
    "IterationRecord",
    "Trajectory",
    "res_metric",
    "step_kaczmarz",
    "step_srk",
    "step_rbk",
    "gbk_select",
    "step_gbk",
    "step_rabk",
    "step_srbk_full",
    "step_srbk_sampled",
    "solve",
]


class ConfigError(ValueError):
    """Raised when a solver configuration is inconsistent with its inputs."""


@dataclass(frozen=True)
class SolverConfig:
    """Every tunable the methods expose.

    ``eta`` sizes the sampled candidate set, ``k_max`` the working block,
    ``n_r`` the uniform partition used by the partition-based baselines, and
    ``alpha`` the averaged-projection step size.
    """

    method: str = "srbk"
    tol: float = 1e-3
    max_iter: int = 1_000_000
    eta: float = 0.1
    k_max: int = 10
    n_r: int = 10
    alpha: float = 1.95
    seed: int = 0
    stopping: str = ERROR_VS_KNOWN

    def __post_init__(self):
        object.__setattr__(self, "method", str(self.method).lower())
        object.__setattr__(self, "stopping", str(self.stopping).lower())
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.stopping not in STOPPING_MODES:
            raise ConfigError(f"unknown stopping mode {self.stopping!r}")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if not (0.0 < self.eta <= 1.0):
            raise ConfigError("eta must be in (0, 1]")
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        if self.n_r < 1:
            raise ConfigError("n_r must be >= 1")
        if self.method == "rabk" and not (0.0 < self.alpha < 2.0):
            raise ConfigError("alpha must be in (0, 2) for rabk")


@dataclass(frozen=True)
class IterateState:
    """Current iterate and iteration counter."""

    x: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class IterationRecord:
    t: int
    res: float
    indices: tuple[int, ...]
    elapsed_ns: int
    rows_touched: int


@dataclass
class Trajectory:
    """Per-iteration log of one solver run."""

    records: list[IterationRecord] = field(default_factory=list)
    status: str = MAX_ITER

    def index_sequence(self) -> list[tuple[int, ...]]:
        return [rec.indices for rec in self.records]

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final_res(self) -> float:
        return self.records[-1].res if self.records else float("nan")


def res_metric(x: np.ndarray, x_star: np.ndarray) -> float:
    """Squared relative error ||x - x_star||^2 / ||x_star||^2."""
    nsq = float(x_star @ x_star)
    if nsq == 0.0:
        raise ConfigError(
            "known solution has zero norm; use the relative_residual stopping mode"
        )
    d = x - x_star
    return float(d @ d) / nsq


# -- step kernels -----------------------------------------------------------


def step_kaczmarz(A: ProblemMatrix, b, state: IterateState, row: int) -> IterateState:
    """Project the iterate onto row ``row``'s hyperplane.

    Zero-norm rows are skipped (iterate unchanged) with a logged warning;
    the iteration counter still advances.
    """
    nsq = A.row_norms_sq[row]
    if nsq == 0.0:
        logger.warning("skipping zero row %d", row)
        return IterateState(state.x, state.t + 1)
    x = state.x.copy()
    coef = (b[row] - A.rows_dot(np.array([row]), state.x)[0]) / nsq
    A.axpy_row(x, row, coef)
    return IterateState(x, state.t + 1)


def step_srk(A, b, state: IterateState, cfg: SolverConfig, rng: RngStream):
    """Sample a candidate set, project onto its highest-scoring row.

    Returns (state', row) with row None when every sampled score is zero
    (stagnant; a fresh sample is drawn next iteration).
    """
    omega = simple_random_sample(A.n_rows, cfg.eta, rng)
    scores = score_rows(A, b, state.x, omega)
    best = int(np.argmax(scores))
    if scores[best] == 0.0:
        return IterateState(state.x, state.t + 1), None
    row = int(omega[best])
    return step_kaczmarz(A, b, state, row), row


def step_rbk(A, b, state: IterateState, P: Partition, rng: RngStream):
    """Project onto a partition block drawn by squared-Frobenius weight."""
    i = sample_block(P, A.frob_sq, rng)
    blk = P.blocks[i]
    r = residual_on(A, b, state.x, blk)
    z = apply_block_pinv(A, blk, r)
    return IterateState(state.x + z, state.t + 1), blk


def gbk_select(A: ProblemMatrix, b, x):
    """Greedy residual block: threshold parameter and qualifying rows.

    Scans the full residual. Returns (eps, block, r) where block holds every
    row whose squared normalized residual reaches eps times the maximum;
    block is empty when the usable residual is zero.
    """
    r = b - A.matvec(x)
    beta_sq = np.zeros(A.n_rows)
    np.divide(r * r, A.row_norms_sq, out=beta_sq, where=A.row_norms_sq > 0)
    mx = float(beta_sq.max())
    if mx == 0.0:
        return 1.0, np.empty(0, dtype=np.int64), r
    eps = 0.5 + float(r @ r) / (2.0 * A.frob_sq) / mx
    eps = min(eps, 1.0)
    block = np.flatnonzero(beta_sq >= eps * mx).astype(np.int64)
    if block.size == 0:  # fp slop at eps == 1: keep the arg-max row
        block = np.array([int(np.argmax(beta_sq))], dtype=np.int64)
    return eps, block, r


def step_gbk(A, b, state: IterateState):
    """Greedy block step over all rows whose residual is near the maximum."""
    eps, block, r = gbk_select(A, b, state.x)
    if block.size == 0:
        return IterateState(state.x, state.t + 1), block
    z = apply_block_pinv(A, block, r[block])
    return IterateState(state.x + z, state.t + 1), block


def step_rabk(A, b, state: IterateState, P: Partition, cfg: SolverConfig, rng: RngStream):
    """Averaged block step: convex combination of single-row projections.

    Row weights are proportional to squared row norms, which collapses the
    weighted sum to alpha * A_J^T (b_J - A_J x) / ||A_J||_F^2.
    """
    i = sample_block(P, A.frob_sq, rng)
    blk = P.blocks[i]
    f_blk = float(P.block_frob_sq[i])
    if f_blk == 0.0:
        raise ValueError(f"block {i} has zero norm; cannot take an averaged step")
    r = residual_on(A, b, state.x, blk)
    if blk.size == 1:
        x = state.x.copy()
        coef = cfg.alpha * (float(r[0]) / f_blk)
        A.axpy_row(x, int(blk[0]), coef)
        return IterateState(x, state.t + 1), blk
    step = A.combine_rows(blk, r)
    x = state.x + (cfg.alpha / f_blk) * step
    return IterateState(x, state.t + 1), blk


def step_srbk_full(A, b, state: IterateState, cfg: SolverConfig):
    """Score all rows, project onto the block of the k_max largest scores."""
    all_rows = np.arange(A.n_rows, dtype=np.int64)
    scores = score_rows(A, b, state.x, all_rows)
    if scores.max(initial=0.0) == 0.0:
        return IterateState(state.x, state.t + 1), None
    block = top_k(scores, all_rows, cfg.k_max)
    r = residual_on(A, b, state.x, block)
    z = apply_block_pinv(A, block, r)
    return IterateState(state.x + z, state.t + 1), block


def step_srbk_sampled(A, b, state: IterateState, cfg: SolverConfig, rng: RngStream):
    """Score only a sampled candidate set, project onto its top-k block.

    Rows outside the sample are never read. Returns (state', omega, block);
    block is None on a stagnant iteration (all sampled scores zero).
    """
    omega = simple_random_sample(A.n_rows, cfg.eta, rng)
    scores = score_rows(A, b, state.x, omega)
    if scores.max(initial=0.0) == 0.0:
        return IterateState(state.x, state.t + 1), omega, None
    block = top_k(scores, omega, min(cfg.k_max, omega.size))
    r = residual_on(A, b, state.x, block)
    z = apply_block_pinv(A, block, r)
    return IterateState(state.x + z, state.t + 1), omega, block


# -- driver ------------------------------------------------------------------


def _make_stepper(A, b, cfg: SolverConfig, rng: RngStream):
    """Bind cfg/method to a stepper returning (state', indices, rows_touched)."""
    m = A.n_rows
    if cfg.method == "k":
        def stepper(state):
            row = state.t % m
            return step_kaczmarz(A, b, state, row), (row,), 1
    elif cfg.method == "rk":
        def stepper(state):
            row = sample_row_by_norm(A, rng)
            return step_kaczmarz(A, b, state, row), (row,), 1
    elif cfg.method == "srk":
        n_omega = sample_size(m, cfg.eta)
        def stepper(state):
            new, row = step_srk(A, b, state, cfg, rng)
            idx = () if row is None else (row,)
            return new, idx, n_omega
    elif cfg.method == "rbk":
        P = uniform_partition(m, cfg.n_r).with_block_norms(A)
        def stepper(state):
            new, blk = step_rbk(A, b, state, P, rng)
            return new, tuple(int(i) for i in blk), blk.size
    elif cfg.method == "gbk":
        def stepper(state):
            new, blk = step_gbk(A, b, state)
            return new, tuple(int(i) for i in blk), m
    elif cfg.method == "rabk":
        P = uniform_partition(m, cfg.n_r).with_block_norms(A)
        def stepper(state):
            new, blk = step_rabk(A, b, state, P, cfg, rng)
            return new, tuple(int(i) for i in blk), blk.size
    elif cfg.method == "srbk_full":
        def stepper(state):
            new, blk = step_srbk_full(A, b, state, cfg)
            idx = () if blk is None else tuple(int(i) for i in blk)
            return new, idx, m
    elif cfg.method == "srbk":
        def stepper(state):
            new, omega, blk = step_srbk_sampled(A, b, state, cfg, rng)
            idx = () if blk is None else tuple(int(i) for i in blk)
            return new, idx, omega.size
    else:  # pragma: no cover - guarded by SolverConfig
        raise ConfigError(f"unknown method {cfg.method!r}")
    return stepper


def _residual_metric(A, b, x, b_nsq: float) -> float:
    r = b - A.matvec(x)
    rsq = float(r @ r)
    return rsq / b_nsq if b_nsq > 0.0 else rsq


def solve(A: ProblemMatrix, b, cfg: SolverConfig, x0=None, x_star=None):
    """Run cfg.method until its stopping metric drops below cfg.tol.

    Returns (final IterateState, Trajectory). The trajectory records one
    entry per step taken; a run that starts converged has an empty one.
    Non-finite iterates end the run with DIVERGED status.
    """
    b = as_vector(b, A.n_rows)
    x = as_vector(x0, A.n_cols) if x0 is not None else np.zeros(A.n_cols)
    if cfg.stopping == ERROR_VS_KNOWN:
        if x_star is None:
            raise ConfigError("error_vs_known stopping requires x_star")
        x_star = as_vector(x_star, A.n_cols)
        metric = lambda xv: res_metric(xv, x_star)
        res_metric(x, x_star)  # raises early on a zero x_star
    else:
        b_nsq = float(b @ b)
        metric = lambda xv: _residual_metric(A, b, xv, b_nsq)

    rng = RngStream(cfg.seed)
    stepper = _make_stepper(A, b, cfg, rng)
    state = IterateState(x, 0)
    traj = Trajectory()
    if metric(state.x) < cfg.tol:
        traj.status = CONVERGED
        return state, traj

    for _ in range(cfg.max_iter):
        t0 = time.perf_counter_ns()
        state, indices, touched = stepper(state)
        if not np.all(np.isfinite(state.x)):
            traj.status = DIVERGED
            return state, traj
        res = metric(state.x)
        traj.records.append(
            IterationRecord(state.t, res, indices, time.perf_counter_ns() - t0, touched)
        )
        if res < cfg.tol:
            traj.status = CONVERGED
            return state, traj
    traj.status = MAX_ITER
    return state, traj
