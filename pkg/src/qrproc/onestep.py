"""One-step (Newton) estimation of the coefficient process.

Starting from an exact fit at one quantile, each neighbouring coefficient
vector is obtained from a single Newton step on the moment condition,

    beta(tau_next) = beta(tau_prev) + J(tau_prev)^{-1} M(tau_next, beta(tau_prev)),

where J is the Powell kernel estimate of the Jacobian and M the sample
moment (1/n) sum (tau - 1(y_i <= x_i'b)) x_i. The step is the Newton step
because dM/db = -J.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import _kernels
from .core import CoefProcess, Dataset, Engine, QrFit, _as_beta, _check_tau, moment, validate_grid
from .errors import DomainError, ProcessError, SingularJacobianError
from .preprocess import PreprocessConfig, fit_single_pk
from .solver import SolverOptions

EIG_RTOL = 1e-12
RIDGE_SCALE = 1e-6


def hall_sheather_bandwidth(tau: float, n: int, alpha: float = 0.05) -> float:
    """Hall-Sheather bandwidth on the probability scale.

    h = n^{-1/3} z^{2/3} [1.5 phi(q)^2 / (2 q^2 + 1)]^{1/3} with z the
    (1 - alpha/2) normal quantile and q = Phi^{-1}(tau).
    """
    tau = _check_tau(tau)
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    q = norm.ppf(tau)
    z = norm.ppf(1.0 - alpha / 2.0)
    return float(n ** (-1.0 / 3.0) * z ** (2.0 / 3.0) * (1.5 * norm.pdf(q) ** 2 / (2.0 * q * q + 1.0)) ** (1.0 / 3.0))


def quantile_bandwidth_factor(tau: float, h: float) -> float:
    """Phi^{-1}(tau + h) - Phi^{-1}(tau - h), the bandwidth for a unit-scale residual.

    h is shrunk to stay inside (0, 1) at extreme tau.
    """
    h = min(h, 0.999 * tau, 0.999 * (1.0 - tau))
    return float(norm.ppf(tau + h) - norm.ppf(tau - h))


def bandwidth_factors(taus, n: int, alpha: float = 0.05) -> np.ndarray:
    return np.array([quantile_bandwidth_factor(t, hall_sheather_bandwidth(t, n, alpha)) for t in taus])


@dataclass(frozen=True, eq=False)
class JacobianEstimate:
    tau: float
    h: float
    J_hat: np.ndarray
    min_eigenvalue: float = field(init=False)

    def __post_init__(self) -> None:
        if not self.h > 0:
            raise DomainError(f"bandwidth must be positive, got {self.h}")
        J = np.array(self.J_hat, dtype=np.float64)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise DomainError(f"Jacobian must be square, got shape {J.shape}")
        J = 0.5 * (J + J.T)
        J.setflags(write=False)
        object.__setattr__(self, "J_hat", J)
        object.__setattr__(self, "min_eigenvalue", float(np.linalg.eigvalsh(J)[0]))

    @property
    def k(self) -> int:
        return self.J_hat.shape[0]

    def is_singular(self, rtol: float = EIG_RTOL) -> bool:
        return not self.min_eigenvalue > rtol * np.trace(self.J_hat) / self.k

    def solve(self, rhs, ridge: bool = False) -> np.ndarray:
        """J^{-1} rhs, refusing near-singular J unless ``ridge`` is set."""
        J = self.J_hat
        if ridge:
            J = J + RIDGE_SCALE * self.tau * np.trace(J) / self.k * np.eye(self.k)
        elif self.is_singular():
            raise SingularJacobianError(
                f"Jacobian is near singular at tau={self.tau:g} (min eigenvalue {self.min_eigenvalue:.3g})",
                tau=self.tau, min_eigenvalue=self.min_eigenvalue)
        return np.linalg.solve(J, rhs)


def powell_jacobian(ds: Dataset, beta, h: float, tau: float = float("nan")) -> JacobianEstimate:
    """(1/(n h)) sum phi(r_i / h) x_i x_i' with r the residuals at ``beta``; h in response units."""
    if not h > 0:
        raise DomainError(f"bandwidth must be positive, got {h}")
    b = _as_beta(ds, beta)
    r = ds.y - ds.X @ b
    return JacobianEstimate(tau, float(h), _kernels.powell_gram(ds.At, r, float(h)))


def estimate_jacobian(ds: Dataset, tau: float, beta, alpha: float = 0.05) -> JacobianEstimate:
    """Powell Jacobian with the Hall-Sheather bandwidth moved to the residual scale.

    The response-unit bandwidth is [Phi^{-1}(tau + h) - Phi^{-1}(tau - h)]
    times min(sd, IQR/1.34) of the residuals.
    """
    tau = _check_tau(tau)
    b = _as_beta(ds, beta)
    hq = quantile_bandwidth_factor(tau, hall_sheather_bandwidth(tau, ds.n, alpha))
    Jm, h, _ = _kernels.jacobian_at(ds.At, ds.y, b, hq)
    return JacobianEstimate(tau, float(h), Jm)


def onestep_update(ds: Dataset, tau_next: float, beta_prev, J: JacobianEstimate, ridge: bool = False) -> np.ndarray:
    """beta_prev + J^{-1} M(tau_next, beta_prev)."""
    b = _as_beta(ds, beta_prev)
    return b + J.solve(moment(ds, tau_next, b), ridge=ridge)


def beta_derivative(ds: Dataset, J: JacobianEstimate) -> np.ndarray:
    """J^{-1} E(X): the slope of the coefficient process in tau."""
    return J.solve(ds.X.mean(axis=0))


@dataclass(frozen=True)
class OneStepConfig:
    """alpha sets the bandwidth; ``moment_tol`` bounds the studentized moment
    of a run that counts as converged (see :func:`studentized_moment`)."""

    alpha: float = 0.05
    start_tau: float | None = None
    ridge: bool = False
    moment_tol: float = 10.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        if not self.moment_tol > 0:
            raise DomainError("moment_tol must be positive")


DEFAULT_ONESTEP = OneStepConfig()


def start_index(taus: np.ndarray, start_tau: float | None) -> int:
    if start_tau is None:
        return int(np.argmin(np.abs(taus - 0.5)))
    hit = np.flatnonzero(np.abs(taus - start_tau) <= 1e-12)
    if hit.size == 0:
        raise DomainError(f"start_tau={start_tau} is not on the grid")
    return int(hit[0])


def studentized_moment(ds: Dataset, tau: float, beta) -> float:
    """max_j sqrt(n) |M_j| / sqrt(tau (1 - tau) mean(x_j^2))."""
    m = moment(ds, tau, beta)
    scale = np.sqrt(tau * (1.0 - tau) * np.mean(ds.X ** 2, axis=0))
    return float(np.max(np.sqrt(ds.n) * np.abs(m) / scale))


@dataclass
class MarchResult:
    betas: np.ndarray
    objectives: np.ndarray
    moment_norms: np.ndarray
    min_eigenvalues: np.ndarray
    bandwidths: np.ndarray
    status: int
    fail_index: int
    max_studentized_moment: float

    def converged(self, moment_tol: float) -> bool:
        return self.status == _kernels.ONESTEP_OK and self.max_studentized_moment <= moment_tol


def march(ds: Dataset, taus: np.ndarray, start: int, beta_start, cfg: OneStepConfig = DEFAULT_ONESTEP,
          hq: np.ndarray | None = None) -> MarchResult:
    """Run the outward Newton march without raising; failures are reported in the result."""
    if hq is None:
        hq = bandwidth_factors(taus, ds.n, cfg.alpha)
    taus = np.asarray(taus, dtype=np.float64)
    col_scale = np.sqrt(np.mean(ds.X ** 2, axis=0))
    betas, objs, moms, smom, eigs, hs, status, fail = _kernels.onestep_march(
        ds.At, ds.y, taus, start, np.asarray(beta_start, dtype=np.float64),
        hq, EIG_RTOL, RIDGE_SCALE if cfg.ridge else 0.0, col_scale)
    if status == _kernels.ONESTEP_OK:
        stud = float(np.max(np.sqrt(ds.n) * smom / np.sqrt(taus * (1.0 - taus))))
    else:
        stud = float("inf")
    return MarchResult(betas, objs, moms, eigs, hs, int(status), int(fail), stud)


def fit_process_onestep(ds: Dataset, grid, start_tau: float | None = None, opts: SolverOptions | None = None,
                        cfg: OneStepConfig | None = None, pp_cfg: PreprocessConfig | None = None) -> CoefProcess:
    """Exact fit at the start quantile (median by default), then one Newton step per grid point.

    Raises :class:`ProcessError` naming the quantile where the Jacobian is
    near singular or the iterate blows up.
    """
    cfg = cfg or DEFAULT_ONESTEP
    grid, warns = validate_grid(grid, ds.n, ds.k)
    taus = grid.taus
    s = start_index(taus, start_tau if start_tau is not None else cfg.start_tau)
    first = fit_single_pk(ds, taus[s], pp_cfg, opts)
    res = march(ds, taus, s, first.beta, cfg)
    if res.status != _kernels.ONESTEP_OK:
        bad = float(taus[res.fail_index])
        what = "near-singular Jacobian" if res.status == _kernels.ONESTEP_SINGULAR else "non-finite update"
        raise ProcessError(f"one-step march failed at tau={bad:g}: {what}; fall back to the preprocess engine",
                           tau=bad)
    fits: list[QrFit] = []
    for j, t in enumerate(taus):
        if j == s:
            fits.append(first)
            continue
        fits.append(QrFit(float(t), res.betas[j], float(res.objectives[j]), float(res.moment_norms[j]),
                          Engine.ONESTEP, iterations=1,
                          info={"h": float(res.bandwidths[j - 1 if j > s else j + 1])}))
    info = {"warnings": warns, "engine": "onestep", "start_tau": float(taus[s]),
            "max_studentized_moment": res.max_studentized_moment,
            "converged": res.converged(cfg.moment_tol)}
    return CoefProcess(grid, fits, info=info)


def process_jacobians(ds: Dataset, proc: CoefProcess, alpha: float = 0.05) -> list[JacobianEstimate]:
    """Powell Jacobians at every grid point of ``proc``."""
    taus = proc.taus
    Js, hs = _kernels.process_jacobians(ds.At, ds.y, np.ascontiguousarray(proc.betas),
                                        bandwidth_factors(taus, ds.n, alpha))
    return [JacobianEstimate(float(t), float(h), Jm) for t, h, Jm in zip(taus, hs, Js)]


def with_jacobians(ds: Dataset, proc: CoefProcess, alpha: float = 0.05) -> CoefProcess:
    """Copy of ``proc`` carrying Jacobian matrices (needed by the score bootstrap)."""
    Js = process_jacobians(ds, proc, alpha)
    info = dict(proc.info, jacobian_bandwidths=[J.h for J in Js])
    return CoefProcess(proc.grid, proc.fits, [J.J_hat for J in Js], info)
