"""Test-problem construction and ingestion.

Gaussian ensembles, Matrix Market files (coordinate/array, real
general/symmetric), and parallel-beam tomography systems with a built-in
concentric-ellipse phantom. Every generated instance is consistent: the
right-hand side is the product of the matrix with the recorded solution.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .matrix import ProblemMatrix, as_columns, as_vector, build_csr
from .sampling import RngStream

logger = logging.getLogger(__name__)

__all__ = [
    "ProblemInstance",
    "TomoGeometry",
    "MatrixMarketError",
    "gen_gaussian",
    "make_consistent",
    "load_matrix_market",
    "write_matrix_market",
    "gen_paralleltomo",
    "phantom",
    "parse_angles",
]


@dataclass
class ProblemInstance:
    """A matrix, its right-hand side(s), and an optional known solution.

    ``b`` is 1-D for a single right-hand side and 2-D column-major for
    several. When ``x_star`` is present the instance must be consistent:
    b equals A x_star to 1e-10 relative.
    """

    A: ProblemMatrix
    b: np.ndarray
    x_star: np.ndarray | None = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.b.ndim == 1:
            self.b = as_vector(self.b, self.A.n_rows)
        else:
            self.b = as_columns(self.b, self.A.n_rows)
        if self.x_star is not None:
            if self.b.ndim == 1:
                self.x_star = as_vector(self.x_star, self.A.n_cols)
                predicted = self.A.matvec(self.x_star)
            else:
                self.x_star = as_columns(self.x_star, self.A.n_cols)
                if self.x_star.shape[1] != self.b.shape[1]:
                    raise ValueError("x_star and b column counts differ")
                predicted = self.A.matmat(self.x_star)
            gap = np.linalg.norm(predicted - self.b)
            scale = np.linalg.norm(self.b)
            if gap > 1e-10 * max(scale, 1.0):
                raise ValueError(
                    f"inconsistent instance: ||b - A x_star|| = {gap:.3e} (||b|| = {scale:.3e})"
                )

    @property
    def is_multi(self) -> bool:
        return self.b.ndim == 2

    @property
    def k_b(self) -> int:
        return self.b.shape[1] if self.is_multi else 1


@dataclass(frozen=True)
class TomoGeometry:
    """Parallel-beam scan geometry: grid side, projection angles, rays per angle."""

    n: int
    angles: tuple[float, ...]
    rays: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("grid side must be >= 1")
        if self.rays < 1:
            raise ValueError("rays per angle must be >= 1")
        if len(self.angles) == 0:
            raise ValueError("angle list must be non-empty")
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))


def parse_angles(spec) -> tuple[float, ...]:
    """Angle list from 'start:step:stop' (inclusive), a comma list, or a sequence."""
    if not isinstance(spec, str):
        return tuple(float(a) for a in spec)
    text = spec.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"angle range must be start:step:stop, got {spec!r}")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("angle step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(start + i * step for i in range(max(count, 0)))
    return tuple(float(p) for p in text.split(",") if p.strip())


def gen_gaussian(m: int, n: int, k_b: int = 1, seed: int = 0, label: str = "") -> ProblemInstance:
    """Dense standard-normal instance with a standard-normal known solution."""
    if min(m, n, k_b) < 1:
        raise ValueError("m, n and k_b must all be >= 1")
    rng = RngStream(seed)
    A = ProblemMatrix.from_dense(rng.standard_normal((m, n)))
    if k_b == 1:
        x_star = rng.standard_normal(n)
        b = A.matvec(x_star)
    else:
        x_star = np.asfortranarray(rng.standard_normal((n, k_b)))
        b = A.matmat(x_star)
    label = label or f"gaussian({m}x{n}" + (f"x{k_b})" if k_b > 1 else ")")
    return ProblemInstance(A, b, x_star, label, {"seed": seed})


def make_consistent(A: ProblemMatrix, x_star, label: str = "") -> ProblemInstance:
    """Instance with right-hand side built as A times the given solution."""
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_star.ndim == 1:
        b = A.matvec(as_vector(x_star, A.n_cols))
    else:
        b = A.matmat(as_columns(x_star, A.n_cols))
    return ProblemInstance(A, b, x_star, label)


# -- Matrix Market ------------------------------------------------------------


class MatrixMarketError(ValueError):
    """Parse failure with the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def load_matrix_market(path, transpose: bool = False) -> ProblemMatrix:
    """Read a real general/symmetric Matrix Market file into a CSR matrix.

    Supports the coordinate and array formats; file indices are 1-based and
    symmetric storage is expanded to both triangles. ``transpose`` swaps the
    roles of rows and columns at load time.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixMarketError("empty file", 1)
    header = lines[0].strip().split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError("malformed header, expected '%%MatrixMarket matrix ...'", 1)
    _, obj, fmt, fieldtype, symmetry = (tok.lower() for tok in header)
    if obj != "matrix":
        raise MatrixMarketError(f"unsupported object {obj!r}", 1)
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(f"unsupported format {fmt!r}", 1)
    if fieldtype not in ("real", "integer"):
        raise MatrixMarketError(f"unsupported field {fieldtype!r} (real data required)", 1)
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry {symmetry!r}", 1)

    body = [
        (i + 1, ln.strip()) for i, ln in enumerate(lines[1:], start=1)
        if ln.strip() and not ln.lstrip().startswith("%")
    ]
    if not body:
        raise MatrixMarketError("missing size line", len(lines))
    size_no, size_line = body[0]
    toks = size_line.split()
    entries: list[tuple[int, int, float]] = []

    if fmt == "coordinate":
        if len(toks) != 3:
            raise MatrixMarketError("coordinate size line needs 'rows cols nnz'", size_no)
        n_rows, n_cols, nnz = (int(t) for t in toks)
        data_lines = body[1:]
        if len(data_lines) != nnz:
            raise MatrixMarketError(
                f"expected {nnz} entries, found {len(data_lines)}", size_no
            )
        for line_no, ln in data_lines:
            parts = ln.split()
            if len(parts) != 3:
                raise MatrixMarketError("entry needs 'row col value'", line_no)
            i, j = int(parts[0]), int(parts[1])
            v = float(parts[2])
            if not (1 <= i <= n_rows and 1 <= j <= n_cols):
                raise MatrixMarketError(
                    f"index ({i}, {j}) outside declared {n_rows}x{n_cols}", line_no
                )
            entries.append((i - 1, j - 1, v))
            if symmetry == "symmetric" and i != j:
                entries.append((j - 1, i - 1, v))
    else:
        if len(toks) != 2:
            raise MatrixMarketError("array size line needs 'rows cols'", size_no)
        n_rows, n_cols = (int(t) for t in toks)
        values = []
        for line_no, ln in body[1:]:
            for tok in ln.split():
                values.append((line_no, float(tok)))
        if symmetry == "general":
            expected = n_rows * n_cols
        else:
            if n_rows != n_cols:
                raise MatrixMarketError("symmetric array matrix must be square", size_no)
            expected = n_rows * (n_rows + 1) // 2
        if len(values) != expected:
            raise MatrixMarketError(
                f"expected {expected} array values, found {len(values)}", size_no
            )
        pos = 0
        for j in range(n_cols):  # array data is column-major
            start_row = j if symmetry == "symmetric" else 0
            for i in range(start_row, n_rows):
                _, v = values[pos]
                pos += 1
                if v == 0.0:
                    continue
                entries.append((i, j, v))
                if symmetry == "symmetric" and i != j:
                    entries.append((j, i, v))

    if transpose:
        entries = [(j, i, v) for (i, j, v) in entries]
        n_rows, n_cols = n_cols, n_rows
    return build_csr(n_rows, n_cols, entries)


def write_matrix_market(path, A: ProblemMatrix) -> None:
    """Write as coordinate real general with round-trip-exact values."""
    dense = None if A.is_sparse else A.to_dense()
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if A.is_sparse:
            indptr, indices, data = A._indptr, A._indices, A._data
            fh.write(f"{A.n_rows} {A.n_cols} {data.size}\n")
            for i in range(A.n_rows):
                for p in range(indptr[i], indptr[i + 1]):
                    fh.write(f"{i + 1} {indices[p] + 1} {data[p]!r}\n")
        else:
            rows, cols = np.nonzero(dense)
            fh.write(f"{A.n_rows} {A.n_cols} {rows.size}\n")
            for i, j in zip(rows, cols):
                fh.write(f"{i + 1} {j + 1} {dense[i, j]!r}\n")


# -- parallel-beam tomography --------------------------------------------------


def phantom(n: int) -> np.ndarray:
    """Piecewise-constant concentric-ellipse phantom, flattened row-major.

    Pixel (i, j) of the n-by-n image (i counted from the top) has its center
    at (x, y) = (j - n/2 + 0.5, n/2 - i - 0.5). Three nested axis-aligned
    ellipses contribute 0.5, 0.3 and 0.2, so values lie in {0, 0.5, 0.8, 1.0}.
    """
    half = n / 2.0
    jj, ii = np.meshgrid(np.arange(n), np.arange(n))
    x = jj - half + 0.5
    y = half - ii - 0.5
    img = np.zeros((n, n))
    for ax, ay, v in ((0.42, 0.34, 0.5), (0.26, 0.20, 0.3), (0.10, 0.08, 0.2)):
        img[(x / (ax * n)) ** 2 + (y / (ay * n)) ** 2 <= 1.0] += v
    return img.ravel()


def _trace_ray(p0x, p0y, dx, dy, half, n):
    """Siddon-style walk: (pixel columns, chord lengths) for one unit-speed ray."""
    # entry/exit parameters against the grid's bounding box (slab method)
    t_lo, t_hi = -np.inf, np.inf
    for p, d in ((p0x, dx), (p0y, dy)):
        if abs(d) < 1e-12:
            if not (-half <= p <= half):
                return None
        else:
            ta = (-half - p) / d
            tb = (half - p) / d
            t_lo = max(t_lo, min(ta, tb))
            t_hi = min(t_hi, max(ta, tb))
    if not (t_hi - t_lo > 1e-12):
        return None
    lines = np.arange(n + 1) - half
    cuts = [np.array([t_lo, t_hi])]
    if abs(dx) >= 1e-12:
        tx = (lines - p0x) / dx
        cuts.append(tx[(tx > t_lo) & (tx < t_hi)])
    if abs(dy) >= 1e-12:
        ty = (lines - p0y) / dy
        cuts.append(ty[(ty > t_lo) & (ty < t_hi)])
    ts = np.unique(np.concatenate(cuts))
    lengths = np.diff(ts)
    keep = lengths > 1e-12
    if not np.any(keep):
        return None
    mids = ts[:-1][keep] + 0.5 * lengths[keep]
    mx = p0x + mids * dx
    my = p0y + mids * dy
    ix = np.clip(np.floor(mx + half).astype(np.int64), 0, n - 1)
    iy = np.clip(np.floor(my + half).astype(np.int64), 0, n - 1)
    cols = (n - 1 - iy) * n + ix  # image row-major: row index from the top
    return cols, lengths[keep]


def gen_paralleltomo(geom: TomoGeometry, label: str = "") -> ProblemInstance:
    """Parallel-beam system on an N-by-N unit-pixel grid.

    One row per (angle, ray) holding the ray's intersection length with each
    pixel. Rays are evenly spaced across the grid's diagonal extent; rays
    that miss the grid produce all-zero rows, which are dropped (the count is
    reported in ``meta``). The solution is the built-in phantom and the
    right-hand side is its projection.
    """
    n = geom.n
    half = n / 2.0
    p = geom.rays
    d = n * math.sqrt(2.0)
    offsets = np.linspace(-d / 2.0, d / 2.0, p) if p > 1 else np.array([0.0])
    entries: list[tuple[int, int, float]] = []
    kept_rows = 0
    dropped = 0
    row_of_ray = []
    for angle in geom.angles:
        theta = math.radians(angle)
        dx, dy = math.cos(theta), math.sin(theta)  # ray direction
        ex, ey = -math.sin(theta), math.cos(theta)  # detector axis
        for s in offsets:
            traced = _trace_ray(s * ex, s * ey, dx, dy, half, n)
            if traced is None:
                dropped += 1
                row_of_ray.append(-1)
                continue
            cols, lengths = traced
            for c, ln in zip(cols, lengths):
                entries.append((kept_rows, int(c), float(ln)))
            row_of_ray.append(kept_rows)
            kept_rows += 1
    if kept_rows == 0:
        raise ValueError("every ray missed the grid; check the geometry")
    if dropped:
        logger.info("dropped %d all-zero tomography rows (rays missing the grid)", dropped)
    A = build_csr(kept_rows, n * n, entries)
    x_star = phantom(n)
    b = A.matvec(x_star)
    label = label or f"tomo(n={n}, angles={len(geom.angles)}, rays={p})"
    meta = {
        "rows_before_drop": len(geom.angles) * p,
        "dropped_zero_rows": dropped,
        "row_of_ray": row_of_ray,
        "geometry": geom,
    }
    return ProblemInstance(A, b, x_star, label, meta)
