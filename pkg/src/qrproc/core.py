"""Data containers and the basic quantile-regression quantities."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import InitVar, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, GridError, ParseError, RangeError, RankError, ShapeError

RANK_RTOL = 1e-10
TAIL_GUARD_FACTOR = 15.0


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise DomainError(f"quantile index must lie in (0, 1), got {tau!r}")
    return tau


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response ``y`` (n,) and design ``X`` (n, k) with the intercept included.

    Arrays are copied and frozen. Derived quantities used by the solvers are
    cached on first access.
    """

    y: np.ndarray
    X: np.ndarray
    column_names: tuple[str, ...] = ()
    check: InitVar[bool] = True

    def __post_init__(self, check: bool) -> None:
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        X = np.array(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ShapeError(f"X has shape {X.shape}, expected ({y.size}, k)")
        n, k = X.shape
        names = tuple(self.column_names) or tuple(f"x{j}" for j in range(k))
        if len(names) != k:
            raise ShapeError(f"{len(names)} column names for {k} columns")
        if check:
            if k < 1 or n < k:
                raise ShapeError(f"need n >= k >= 1, got n={n}, k={k}")
            if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
                raise DomainError("non-finite entries in data")
            sv = np.linalg.svd(X, compute_uv=False)
            if sv[-1] <= RANK_RTOL * sv[0]:
                raise RankError(
                    f"design matrix is rank deficient (smallest/largest singular value {sv[-1] / sv[0]:.3g})")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @cached_property
    def At(self) -> np.ndarray:
        """Transposed design, C-contiguous (k, n)."""
        return np.ascontiguousarray(self.X.T)

    @cached_property
    def xtx_inv_n(self) -> np.ndarray:
        """(X'X / n)^{-1}."""
        try:
            return np.linalg.inv(self.X.T @ self.X / self.n)
        except np.linalg.LinAlgError as exc:
            raise RankError("X'X is singular") from exc

    @cached_property
    def leverage_scale(self) -> np.ndarray:
        """sqrt(x_i' (X'X/n)^{-1} x_i) per row."""
        z = _kernels.residual_scale_arrays(self.At, self.xtx_inv_n)
        z.setflags(write=False)
        return z

    @cached_property
    def max_abs_x(self) -> float:
        return float(np.abs(self.X).max())

    def subset(self, rows: np.ndarray, check: bool = False) -> "Dataset":
        return Dataset(self.y[rows], self.X[rows], self.column_names, check=check)


@dataclass(frozen=True, eq=False)
class QuantileGrid:
    taus: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.taus, dtype=np.float64).reshape(-1)
        if t.size == 0:
            raise GridError("quantile grid is empty")
        if not np.all((t > 0.0) & (t < 1.0)):
            raise GridError(f"quantile indices must lie in (0, 1): {t[(t <= 0) | (t >= 1)]}")
        if t.size > 1 and not np.all(np.diff(t) > 0.0):
            raise GridError("quantile grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "taus", t)

    def __len__(self) -> int:
        return self.taus.size

    def __iter__(self):
        return iter(self.taus.tolist())

    @property
    def mesh(self) -> float:
        return float(np.diff(self.taus).max()) if self.taus.size > 1 else 0.0

    def index(self, tau: float, atol: float = 1e-12) -> int:
        hit = np.flatnonzero(np.abs(self.taus - tau) <= atol)
        if hit.size == 0:
            raise GridError(f"tau={tau} is not a grid point")
        return int(hit[0])


class Engine(str, enum.Enum):
    BASELINE = "baseline"
    PREPROCESS = "preprocess"
    ONESTEP = "onestep"
    GLOBBED = "globbed"


@dataclass
class QrFit:
    tau: float
    beta: np.ndarray
    objective: float
    moment_inf_norm: float
    engine: Engine
    iterations: int = 0
    fixups: int = 0
    info: dict = field(default_factory=dict)


@dataclass
class CoefProcess:
    grid: QuantileGrid
    fits: list[QrFit]
    jacobians: list[np.ndarray] | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.fits) != len(self.grid):
            raise ShapeError(f"{len(self.fits)} fits for a grid of {len(self.grid)}")
        if self.jacobians is not None and len(self.jacobians) != len(self.grid):
            raise ShapeError("jacobians not aligned with grid")

    @property
    def taus(self) -> np.ndarray:
        return self.grid.taus

    @property
    def betas(self) -> np.ndarray:
        """(J, k) coefficient matrix."""
        return np.vstack([f.beta for f in self.fits])


def check_loss(tau: float, u):
    """Pinball loss (tau - 1(u <= 0)) * u; works on scalars and arrays."""
    tau = _check_tau(tau)
    u = np.asarray(u, dtype=np.float64)
    out = (tau - (u <= 0.0)) * u
    return float(out) if out.ndim == 0 else out


def _as_beta(ds: Dataset, beta) -> np.ndarray:
    b = np.asarray(beta, dtype=np.float64).reshape(-1)
    if b.size != ds.k:
        raise ShapeError(f"beta has {b.size} entries, design has {ds.k} columns")
    if not np.all(np.isfinite(b)):
        raise DomainError("beta must be finite")
    return b


def objective(ds: Dataset, tau: float, beta) -> float:
    b = _as_beta(ds, beta)
    return float(np.sum(check_loss(tau, ds.y - ds.X @ b)))


def moment(ds: Dataset, tau: float, beta) -> np.ndarray:
    """Sample moment (1/n) sum (tau - 1(y_i <= x_i'beta)) x_i."""
    tau = _check_tau(tau)
    b = _as_beta(ds, beta)
    return _kernels.moment_arrays(ds.At, ds.y, tau, b)


ZERO_RESIDUAL_ULPS = 64.0


def at_or_below_fit(ds: Dataset, betas) -> np.ndarray:
    """1(y_i <= x_i'b) with residuals at rounding level counted as zero.

    Exact fits interpolate k rows, whose computed residuals are +/- a few
    ulps; the tolerance 64 eps (|y_i| + sum_j |x_ij b_j|) sends all of them to
    the same side, so the indicator does not flip under last-bit changes of
    ``b``. ``betas`` is (k,) or (J, k); the result is (n,) or (n, J).
    """
    B = np.asarray(betas, dtype=np.float64)
    B2 = np.atleast_2d(B)
    fit = ds.X @ B2.T
    tol = ZERO_RESIDUAL_ULPS * np.finfo(float).eps * (np.abs(ds.y)[:, None] + np.abs(ds.X) @ np.abs(B2).T)
    below = ds.y[:, None] - fit <= tol
    return below[:, 0] if B.ndim == 1 else below


def make_fit(ds: Dataset, tau: float, beta: np.ndarray, engine: Engine, iterations: int = 0,
             fixups: int = 0, **info) -> QrFit:
    beta = np.asarray(beta, dtype=np.float64)
    obj, mom = _kernels.fit_stats(ds.At, ds.y, float(tau), beta)
    return QrFit(
        tau=float(tau),
        beta=beta,
        objective=float(obj),
        moment_inf_norm=float(mom),
        engine=engine,
        iterations=int(iterations),
        fixups=int(fixups),
        info=info,
    )


def moment_bound(ds: Dataset) -> float:
    """k * max|x_ij| / n, the size of the moment at any exact solution."""
    return ds.k * ds.max_abs_x / ds.n


def validate_grid(taus: Sequence[float] | QuantileGrid, n: int, k: int) -> tuple[QuantileGrid, list[str]]:
    """Validate a grid and flag indices too close to 0 or 1 for normal inference.

    The guard is eps = 15 k / n; a tau with tau < eps or 1 - tau < eps draws a
    warning string. Nothing is rejected on that basis.
    """
    grid = taus if isinstance(taus, QuantileGrid) else QuantileGrid(np.asarray(taus, dtype=float))
    eps = TAIL_GUARD_FACTOR * k / n
    warns = [
        f"tau={t:g} is within the tail guard 15k/n={eps:.4g}; normal-approximation inference may be unreliable"
        for t in grid.taus
        if t < eps or 1.0 - t < eps
    ]
    return grid, warns


def interpolate_process(proc: CoefProcess, tau: float) -> np.ndarray:
    taus = proc.taus
    if not taus[0] <= tau <= taus[-1]:
        raise RangeError(f"tau={tau} outside grid span [{taus[0]}, {taus[-1]}]")
    betas = proc.betas
    j = int(np.searchsorted(taus, tau, side="left"))
    if taus[j] == tau:
        return betas[j].copy()
    t0, t1 = taus[j - 1], taus[j]
    w = (tau - t0) / (t1 - t0)
    return (1.0 - w) * betas[j - 1] + w * betas[j]


def parse_grid(spec: str) -> np.ndarray:
    """Expand "a:b:s" (inclusive, end point snapped at 1e-12) or "t1,t2,..."."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise GridError(f"grid spec {spec!r} must look like start:stop:step")
        a, b, s = (float(p) for p in parts)
        if s <= 0 or b < a:
            raise GridError(f"bad grid spec {spec!r}")
        count = int(math.floor((b - a) / s + 1e-12 / s)) + 1
        taus = a + s * np.arange(count)
        if abs(taus[-1] - b) <= 1e-12 + 1e-9 * s:
            taus[-1] = b
        return np.round(taus, 12)
    try:
        return np.array([float(p) for p in spec.split(",") if p.strip()])
    except ValueError as exc:
        raise GridError(f"bad grid spec {spec!r}") from exc


def load_csv(path: str | Path, response_column: str, intercept: bool = True) -> Dataset:
    """Read a numeric CSV with a header row into a :class:`Dataset`.

    Every column other than ``response_column`` becomes a covariate, in file
    order; a column of ones named ``intercept`` is prepended when requested.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=0) from None
        if response_column not in header:
            raise ParseError(f"{path}: no column named {response_column!r}", row=0)
        rows = []
        for lineno, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}: row {lineno} has {len(rec)} cells, header has {len(header)}", row=lineno)
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                bad = next(c for c in rec if not _is_float(c))
                raise ParseError(f"{path}: row {lineno}: non-numeric cell {bad!r}", row=lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"{path}: row {lineno}: non-finite cell", row=lineno)
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows", row=1)
    data = np.array(rows)
    j = header.index(response_column)
    y = data[:, j]
    cov_names = [h for i, h in enumerate(header) if i != j]
    X = np.delete(data, j, axis=1)
    if intercept:
        X = np.column_stack([np.ones(len(y)), X])
        cov_names = ["intercept", *cov_names]
    return Dataset(y, X, tuple(cov_names))


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True
