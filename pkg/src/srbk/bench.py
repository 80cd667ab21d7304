"""Experiment harness: build problems, run method grids, aggregate, emit CSV.

Each (problem, method) cell is run ``repetitions`` times with seeds
base_seed + repetition and reports mean iteration count and mean wall time
of the solve loop (problem construction excluded). A repetition that hits
the iteration cap marks the whole cell as not converged; means are still
reported but never passed off as converged results.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .multirhs import solve_multirhs
from .problems import (
    ProblemInstance,
    TomoGeometry,
    gen_gaussian,
    gen_paralleltomo,
    load_matrix_market,
    make_consistent,
    parse_angles,
)
from .sampling import RngStream
from .solvers import CONVERGED, SolverConfig, Trajectory, solve

logger = logging.getLogger(__name__)

__all__ = [
    "ProblemSource",
    "ExperimentSpec",
    "ResultRow",
    "run_experiment",
    "write_csv",
    "write_trajectory_csv",
    "parse_config_file",
    "RESULT_COLUMNS",
]

RESULT_COLUMNS = [
    "label", "method", "eta", "k_max", "n_r", "alpha", "tol",
    "seed", "iterations", "cpu_seconds", "final_res", "status",
]

_STATUS_RANK = {"converged": 0, "max_iter": 1, "diverged": 2, "error": 3}


@dataclass(frozen=True)
class ProblemSource:
    """Recipe for one benchmark problem; ``build`` materializes it."""

    kind: str  # gaussian | mm | tomo
    m: int = 0
    n: int = 0
    k_b: int = 1
    seed: int = 0
    path: str = ""
    transpose: bool = False
    rhs: str = "randn"  # randn | ones
    tomo: TomoGeometry | None = None
    label: str = ""

    def build(self) -> ProblemInstance:
        if self.kind == "gaussian":
            inst = gen_gaussian(self.m, self.n, self.k_b, self.seed, self.label)
        elif self.kind == "mm":
            A = load_matrix_market(self.path, transpose=self.transpose)
            if self.rhs == "ones":
                x_star = np.ones((A.n_cols, self.k_b)) if self.k_b > 1 else np.ones(A.n_cols)
            elif self.rhs == "randn":
                rng = RngStream(self.seed)
                shape = (A.n_cols, self.k_b) if self.k_b > 1 else A.n_cols
                x_star = rng.standard_normal(shape)
            else:
                raise ValueError(f"unknown rhs kind {self.rhs!r} (expected randn or ones)")
            name = self.label or f"mm({self.path}{'^T' if self.transpose else ''})"
            inst = make_consistent(A, x_star, name)
        elif self.kind == "tomo":
            if self.tomo is None:
                raise ValueError("tomo problem source needs a TomoGeometry")
            inst = gen_paralleltomo(self.tomo, self.label)
        else:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        return inst


@dataclass
class ExperimentSpec:
    """A grid of problems times methods, repeated with shifted seeds."""

    problems: list[ProblemSource]
    methods: list[SolverConfig]
    repetitions: int = 5
    output: str | None = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.methods:
            raise ValueError("at least one method is required")


@dataclass
class ResultRow:
    label: str
    method: str
    eta: float
    k_max: int
    n_r: int
    alpha: float
    tol: float
    seed: int
    iterations: float
    cpu_seconds: float
    final_res: float
    status: str

    def as_list(self):
        return [getattr(self, c) for c in RESULT_COLUMNS]


def _run_cell(inst: ProblemInstance, cfg: SolverConfig, repetitions: int) -> ResultRow:
    its, cpus, finals = [], [], []
    status = CONVERGED
    for rep in range(repetitions):
        rep_cfg = replace(cfg, seed=cfg.seed + rep)
        t0 = time.perf_counter()
        if inst.is_multi:
            if cfg.method != "srk":
                raise ValueError(
                    f"method {cfg.method!r} does not support multiple right-hand sides"
                )
            _, traj = solve_multirhs(inst.A, inst.b, rep_cfg, X_star=inst.x_star)
        else:
            _, traj = solve(inst.A, inst.b, rep_cfg, x_star=inst.x_star)
        cpus.append(time.perf_counter() - t0)
        its.append(traj.iterations)
        finals.append(traj.final_res if traj.records else 0.0)
        if _STATUS_RANK[traj.status] > _STATUS_RANK[status]:
            status = traj.status
    return ResultRow(
        label=inst.label, method=cfg.method, eta=cfg.eta, k_max=cfg.k_max,
        n_r=cfg.n_r, alpha=cfg.alpha, tol=cfg.tol, seed=cfg.seed,
        iterations=float(np.mean(its)), cpu_seconds=float(np.mean(cpus)),
        final_res=float(np.mean(finals)), status=status,
    )


def run_experiment(spec: ExperimentSpec) -> list[ResultRow]:
    """Run the grid; per-problem failures become error rows, other cells proceed."""
    rows: list[ResultRow] = []
    for src in spec.problems:
        try:
            inst = src.build()
        except Exception as exc:
            logger.error("problem %r failed to build: %s", src.label or src.kind, exc)
            for cfg in spec.methods:
                rows.append(_error_row(src.label or src.kind, cfg, exc))
            continue
        for cfg in spec.methods:
            try:
                rows.append(_run_cell(inst, cfg, spec.repetitions))
            except Exception as exc:
                logger.error("cell (%s, %s) failed: %s", inst.label, cfg.method, exc)
                rows.append(_error_row(inst.label, cfg, exc))
    rows.sort(key=lambda r: (r.label, r.method, r.seed))
    return rows


def _error_row(label: str, cfg: SolverConfig, exc: Exception) -> ResultRow:
    return ResultRow(
        label=label, method=cfg.method, eta=cfg.eta, k_max=cfg.k_max, n_r=cfg.n_r,
        alpha=cfg.alpha, tol=cfg.tol, seed=cfg.seed, iterations=float("nan"),
        cpu_seconds=float("nan"), final_res=float("nan"), status="error",
    )


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def write_csv(rows: list[ResultRow], path) -> None:
    """Header plus one line per result, floats in round-trip precision."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(v) for v in row.as_list()])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "res", "block_size", "elapsed_ns"])
        for rec in traj.records:
            writer.writerow([rec.t, repr(rec.res), len(rec.indices), rec.elapsed_ns])


# -- config file ---------------------------------------------------------------

_METHOD_KEYS = {"tol", "max_iter", "eta", "k_max", "n_r", "alpha", "seed", "stopping"}


def _parse_problem_line(value: str, default_seed: int) -> ProblemSource:
    parts = value.split()
    if not parts:
        raise ValueError("empty problem specification")
    kind = parts[0].lower()
    kv = {}
    for tok in parts[1:]:
        if "=" not in tok:
            raise ValueError(f"problem option {tok!r} must look like key=value")
        k, v = tok.split("=", 1)
        kv[k.lower()] = v
    if kind == "gaussian":
        return ProblemSource(
            kind="gaussian", m=int(kv["m"]), n=int(kv["n"]),
            k_b=int(kv.get("kb", kv.get("k_b", 1))),
            seed=int(kv.get("seed", default_seed)), label=kv.get("label", ""),
        )
    if kind == "mm":
        return ProblemSource(
            kind="mm", path=kv["path"],
            transpose=kv.get("transpose", "false").lower() in ("1", "true", "yes"),
            rhs=kv.get("rhs", "randn"), k_b=int(kv.get("kb", kv.get("k_b", 1))),
            seed=int(kv.get("seed", default_seed)), label=kv.get("label", ""),
        )
    if kind == "tomo":
        geom = TomoGeometry(
            n=int(kv["n"]), angles=parse_angles(kv.get("angles", "0:1:178")),
            rays=int(kv["rays"]),
        )
        return ProblemSource(kind="tomo", tomo=geom, label=kv.get("label", ""))
    raise ValueError(f"unknown problem kind {kind!r}")


def parse_config_file(path) -> ExperimentSpec:
    """Read the simple ``key = value`` experiment format.

    Repeatable key: ``problem``. Method parameters (tol, eta, k_max, n_r,
    alpha, seed, max_iter, stopping) apply to every method listed on the
    ``methods`` line.
    """
    problems: list[str] = []
    settings: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key.lower() == "problem":
                problems.append(value)
            else:
                settings[key.lower()] = value
    seed = int(settings.get("seed", 0))
    method_kwargs = {}
    for key in _METHOD_KEYS:
        if key in settings:
            value = settings[key]
            if key in ("max_iter", "k_max", "n_r", "seed"):
                method_kwargs[key] = int(value)
            elif key == "stopping":
                method_kwargs[key] = value
            else:
                method_kwargs[key] = float(value)
    methods = [
        SolverConfig(method=m.strip(), **method_kwargs)
        for m in settings.get("methods", "srbk").split(",") if m.strip()
    ]
    spec = ExperimentSpec(
        problems=[_parse_problem_line(p, seed) for p in problems],
        methods=methods,
        repetitions=int(settings.get("repetitions", 5)),
        output=settings.get("output"),
    )
    if not spec.problems:
        raise ValueError("config file declares no problems")
    return spec
