"""Exact quantile-regression solvers.

``solve_qr`` runs a Frisch-Newton primal-dual interior point on the dual LP
and then snaps the iterate onto the basic solution it converges to, so
returned fits interpolate k observations exactly. ``solve_qr_bruteforce``
enumerates basic solutions and is only meant as a test oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Dataset, Engine, QrFit, _check_tau, check_loss, make_fit
from .errors import ConvergenceError, DomainError, ShapeError, SizeError

BRUTEFORCE_MAX_N = 30
BRUTEFORCE_MAX_K = 4


@dataclass(frozen=True)
class SolverOptions:
    duality_gap_tol: float = 1e-8
    max_iter: int = 50
    step_fraction: float = 0.99995
    polish: bool = True

    def __post_init__(self) -> None:
        if not self.duality_gap_tol > 0:
            raise DomainError("duality_gap_tol must be positive")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if not 0.0 < self.step_fraction < 1.0:
            raise DomainError("step_fraction must lie in (0, 1)")


DEFAULT_OPTIONS = SolverOptions()


def _warm(ds_k: int, warm_start) -> tuple[np.ndarray, bool]:
    if warm_start is None:
        return np.zeros(ds_k), False
    w = np.asarray(warm_start, dtype=np.float64).reshape(-1)
    if w.size != ds_k:
        raise ShapeError(f"warm start has {w.size} entries, expected {ds_k}")
    if not np.all(np.isfinite(w)):
        return np.zeros(ds_k), False
    return w, True


def solve_qr(ds: Dataset, tau: float, opts: SolverOptions | None = None, warm_start=None) -> QrFit:
    """Minimise sum rho_tau(y_i - x_i'b) over b.

    A warm start only moves the dual starting point; it changes iteration
    counts, never the optimum.
    """
    tau = _check_tau(tau)
    opts = opts or DEFAULT_OPTIONS
    beta0, warm = _warm(ds.k, warm_start)
    beta, it, gap, status, cert = _kernels.solve_full(
        ds.At, ds.y, tau, beta0, warm, opts.duality_gap_tol, opts.max_iter, opts.step_fraction, opts.polish)
    if status != _kernels.OK:
        raise ConvergenceError(
            f"interior point did not converge at tau={tau} (status {status}, {it} iterations, gap {gap:.3g})",
            beta=beta, gap=gap)
    return make_fit(ds, tau, beta, Engine.BASELINE, iterations=it, certified=bool(cert), gap=float(gap))


def solve_qr_bruteforce(ds: Dataset, tau: float) -> QrFit:
    """Best basic solution over all k-subsets of rows (ties: first subset in lexicographic order)."""
    tau = _check_tau(tau)
    n, k = ds.n, ds.k
    if n > BRUTEFORCE_MAX_N or k > BRUTEFORCE_MAX_K:
        raise SizeError(f"brute force limited to n <= {BRUTEFORCE_MAX_N}, k <= {BRUTEFORCE_MAX_K} (got n={n}, k={k})")
    X, y = ds.X, ds.y
    best, best_obj, best_rows = None, np.inf, None
    for rows in itertools.combinations(range(n), k):
        sub = X[list(rows)]
        if abs(np.linalg.det(sub)) <= 1e-12 * max(1.0, np.abs(sub).max()) ** k:
            continue
        b = np.linalg.solve(sub, y[list(rows)])
        obj = float(np.sum(check_loss(tau, y - X @ b)))
        if obj < best_obj - 1e-12 * (1.0 + abs(best_obj) if np.isfinite(best_obj) else 1.0):
            best, best_obj, best_rows = b, obj, rows
    if best is None:
        raise SizeError("no nonsingular k-subset of rows")
    return make_fit(ds, tau, best, Engine.BASELINE, basis=best_rows)


@dataclass(frozen=True, eq=False)
class GlobbedProblem:
    """Kept rows plus the two aggregated pseudo-rows.

    ``x_low``/``x_high`` are the sums of the globbed rows (``None`` when the
    set is empty). Pseudo-responses sit far below / above the preliminary fit.
    """

    y: np.ndarray
    X: np.ndarray
    x_low: np.ndarray | None
    y_low: float
    x_high: np.ndarray | None
    y_high: float
    kept: np.ndarray
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def build(cls, ds: Dataset, low: np.ndarray, high: np.ndarray, prelim_beta) -> "GlobbedProblem":
        low = np.asarray(low, dtype=np.int64)
        high = np.asarray(high, dtype=np.int64)
        if np.intersect1d(low, high).size:
            raise ShapeError("J_L and J_H overlap")
        mask = np.ones(ds.n, dtype=bool)
        mask[low] = False
        mask[high] = False
        kept = np.flatnonzero(mask)
        prelim = np.asarray(prelim_beta, dtype=np.float64)
        yrange = float(ds.y.max() - ds.y.min()) or 1.0
        mrn = float(np.linalg.norm(ds.X, axis=1).mean()) or 1.0

        def pseudo(rows, sign):
            if rows.size == 0:
                return None, 0.0
            xg = ds.X[rows].sum(axis=0)
            c = _kernels.glob_offset(xg, yrange, mrn)
            return xg, float(xg @ prelim + sign * c)

        xl, yl = pseudo(low, -1.0)
        xh, yh = pseudo(high, 1.0)
        return cls(ds.y[kept], ds.X[kept], xl, yl, xh, yh, kept, low, high)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, int]:
        """Stacked (X, y) with pseudo-rows last, and the number of real rows."""
        Xs, ys = [self.X], [self.y]
        for xg, yg in ((self.x_low, self.y_low), (self.x_high, self.y_high)):
            if xg is not None:
                Xs.append(xg[None, :])
                ys.append(np.array([yg]))
        return np.vstack(Xs), np.concatenate(ys), self.X.shape[0]


def solve_globbed(gp: GlobbedProblem, tau: float, opts: SolverOptions | None = None, warm_start=None) -> QrFit:
    """Exact minimiser of the reduced problem; objective is that of the reduced problem."""
    tau = _check_tau(tau)
    opts = opts or DEFAULT_OPTIONS
    X, y, m_real = gp.arrays()
    At = np.ascontiguousarray(X.T)
    k = X.shape[1]
    beta0, warm = _warm(k, warm_start)
    scale = 1.0 + float(np.abs(gp.y - gp.y.mean()).sum()) if m_real else 1.0
    beta, it, gap, status = _kernels.fnb(At, y, tau, beta0, warm, opts.duality_gap_tol * scale,
                                         opts.max_iter, opts.step_fraction)
    cert = False
    if opts.polish and status != _kernels.NUMERICAL:
        bp, acc, cert = _kernels.polish(At, y, tau, beta, m_real)
        if acc:
            beta = bp
            if cert:
                status = _kernels.OK
    if status != _kernels.OK:
        raise ConvergenceError(f"globbed solve did not converge at tau={tau}", beta=beta, gap=gap)
    obj = float(_kernels.check_objective(At, y, tau, beta))
    mom = _kernels.moment_arrays(At, y, tau, beta)
    return QrFit(tau, beta, obj, float(np.abs(mom).max()), Engine.GLOBBED, it, 0,
                 {"certified": bool(cert), "kept": int(m_real)})
