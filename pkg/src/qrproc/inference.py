"""Sandwich variances, pointwise tests, functional (KS / CvM) tests and uniform bands.

Bootstrap critical values use the p-value (1 + #{T* >= T}) / (B + 1) and
reject when it is below alpha; the reported critical value is the order
statistic c of the bootstrap statistics for which "T > c" is the same
event, so statistic, critical value and p-value always agree.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from .bootstrap import BootstrapDraws, check_alignment
from .core import CoefProcess, Dataset, QrFit, _as_beta, _check_tau, at_or_below_fit
from .errors import DomainError, ShapeError
from .onestep import JacobianEstimate, process_jacobians


class TestKind(str, enum.Enum):
    KS = "KS"
    CVM = "CvM"
    WALD = "Wald"


@dataclass
class TestResult:
    statistic: float
    critical_value: float
    p_value: float
    kind: TestKind
    alpha: float
    null: str = ""
    taus: list[float] = field(default_factory=list)
    coefficient: int | None = None

    __test__ = False  # not a pytest class

    @property
    def reject(self) -> bool:
        return self.statistic > self.critical_value

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["reject"] = self.reject
        d["grid"] = d.pop("taus")
        return d

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


@dataclass
class UniformBands:
    taus: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    critical_value: np.ndarray
    pointwise_lower: np.ndarray
    pointwise_upper: np.ndarray
    column_names: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        per_tau = [
            {"tau": float(t),
             "bounds": {name: [float(self.lower[j, c]), float(self.upper[j, c])]
                        for c, name in enumerate(self.column_names)}}
            for j, t in enumerate(self.taus)
        ]
        return {"kind": "uniform_band", "alpha": self.alpha,
                "critical_value": np.atleast_1d(self.critical_value).tolist(),
                "grid": self.taus.tolist(), "per_tau": per_tau}

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def sigma_hat(ds: Dataset, beta_tau, beta_tau2, tau: float, tau2: float) -> np.ndarray:
    """(1/n) sum (tau - 1(y_i <= x_i'b)) (tau2 - 1(y_i <= x_i'b2)) x_i x_i'."""
    tau, tau2 = _check_tau(tau), _check_tau(tau2)
    b1, b2 = _as_beta(ds, beta_tau), _as_beta(ds, beta_tau2)
    a1 = tau - at_or_below_fit(ds, b1)
    a2 = tau2 - at_or_below_fit(ds, b2)
    return (ds.X * (a1 * a2)[:, None]).T @ ds.X / ds.n


def pointwise_variance(J: JacobianEstimate | np.ndarray, Sigma) -> np.ndarray:
    """J^{-1} Sigma J^{-1}; standard errors are sqrt(diag / n)."""
    if not isinstance(J, JacobianEstimate):
        J = JacobianEstimate(float("nan"), 1.0, np.atleast_2d(np.asarray(J, dtype=np.float64)))
    S = np.atleast_2d(np.asarray(Sigma, dtype=np.float64))
    if S.shape != J.J_hat.shape:
        raise ShapeError(f"Sigma has shape {S.shape}, Jacobian {J.J_hat.shape}")
    Jinv_S = J.solve(S)
    V = J.solve(Jinv_S.T)
    return 0.5 * (V + V.T)


def standard_errors(V: np.ndarray, n: int) -> np.ndarray:
    return np.sqrt(np.diag(V) / n)


def process_scales(ds: Dataset, proc: CoefProcess, alpha: float = 0.05) -> np.ndarray:
    """(J, k) pointwise standard deviations sqrt(V_jj(tau)) from the sandwich."""
    if proc.jacobians is not None:
        Js = [JacobianEstimate(float(t), 1.0, Jm) for t, Jm in zip(proc.taus, proc.jacobians)]
    else:
        Js = process_jacobians(ds, proc, alpha)
    out = np.empty((len(proc.taus), ds.k))
    for j, (t, fit, J) in enumerate(zip(proc.taus, proc.fits, Js)):
        V = pointwise_variance(J, sigma_hat(ds, fit.beta, fit.beta, t, t))
        out[j] = np.sqrt(np.clip(np.diag(V), 0.0, None))
    return out


def wald_test(estimate: float, se: float, null_value: float, alpha: float = 0.05, coefficient: int | None = None,
              tau: float | None = None) -> TestResult:
    """Two-sided normal test of estimate = null_value."""
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    if not se > 0:
        raise DomainError(f"standard error must be positive, got {se}")
    stat = abs(float(estimate) - float(null_value)) / float(se)
    return TestResult(stat, float(norm.ppf(1.0 - alpha / 2.0)), float(2.0 * norm.sf(stat)), TestKind.WALD, alpha,
                      f"coefficient {coefficient} = {null_value:g}", [] if tau is None else [float(tau)], coefficient)


def pointwise_test(fit: QrFit, V: np.ndarray, null_value: float, alpha: float = 0.05, *, n: int,
                   coefficient: int) -> TestResult:
    """|beta_j - b0| / se_j against the normal critical value, se_j = sqrt(V_jj / n)."""
    se = standard_errors(np.atleast_2d(V), n)[coefficient]
    if not se > 0:
        raise DomainError(f"zero standard error for coefficient {coefficient}")
    return wald_test(fit.beta[coefficient], se, null_value, alpha, coefficient, fit.tau)


def bootstrap_critical_value(boot_stats: np.ndarray, alpha: float) -> float:
    """Order statistic c with  T > c  <=>  (1 + #{T* >= T}) / (B + 1) < alpha."""
    T = np.sort(np.asarray(boot_stats, dtype=np.float64))
    B = T.size
    K = math.ceil(alpha * (B + 1) - 1e-12) - 2  # largest admissible count of T* >= T
    if K < 0:
        return float("inf")
    if K >= B:
        return float("-inf")
    return float(T[B - K - 1])


def bootstrap_p_value(stat: float, boot_stats: np.ndarray) -> float:
    T = np.asarray(boot_stats)
    return float((1 + np.count_nonzero(T >= stat)) / (T.size + 1))


def _functional(d: np.ndarray, kind: TestKind) -> np.ndarray:
    """Sup of |d| or mean of d^2 over the last axis."""
    return np.max(np.abs(d), axis=-1) if kind is TestKind.KS else np.mean(d * d, axis=-1)


def functional_test(ds: Dataset, proc: CoefProcess, draws: BootstrapDraws, coefficient: int,
                    null_fn: Callable[[float], float] | float, kind: TestKind | str = TestKind.KS,
                    alpha: float = 0.05, scales: np.ndarray | None = None, min_replicates: int = 100) -> TestResult:
    """KS or CvM test of beta_j(.) = null_fn(.) over the grid, studentized by sqrt(V_jj(tau)).

    ``scales`` are the (J, k) pointwise standard deviations; computed from
    the sandwich when omitted.
    """
    kind = TestKind(kind)
    if kind is TestKind.WALD:
        raise DomainError("functional tests are KS or CvM")
    check_alignment(proc, draws)
    if draws.B < min_replicates:
        raise DomainError(f"need at least {min_replicates} bootstrap replicates, got {draws.B}")
    s = process_scales(ds, proc) if scales is None else np.asarray(scales)
    sj = s[:, coefficient]
    if not np.all(sj > 0):
        raise DomainError(f"zero pointwise scale for coefficient {coefficient}")
    taus = proc.taus
    null = np.array([null_fn(t) for t in taus]) if callable(null_fn) else np.full(taus.size, float(null_fn))
    root_n = np.sqrt(ds.n)
    est = proc.betas[:, coefficient]
    stat = float(_functional(root_n * (est - null) / sj, kind))
    boot = _functional(root_n * (draws.draws[:, :, coefficient] - est) / sj, kind)
    desc = f"coefficient {coefficient} = " + ("null_fn(tau)" if callable(null_fn) else f"{float(null_fn):g}")
    return TestResult(stat, bootstrap_critical_value(boot, alpha), bootstrap_p_value(stat, boot), kind, alpha, desc,
                      taus.tolist(), coefficient)


def uniform_bands(ds: Dataset, proc: CoefProcess, draws: BootstrapDraws, alpha: float = 0.05,
                  scales: np.ndarray | None = None, joint: bool = True) -> UniformBands:
    """beta_j(tau) +/- c se_j(tau) with c from the bootstrap sup of studentized deviations.

    ``joint`` takes the sup over grid points and coefficients (one c); with
    ``joint=False`` each coefficient gets its own c from the sup over the
    grid, which makes the band for coefficient j exactly the acceptance
    region of the KS test on that coefficient.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    check_alignment(proc, draws)
    s = process_scales(ds, proc) if scales is None else np.asarray(scales)
    if not np.all(s > 0):
        raise DomainError("zero pointwise scale in the process")
    est = proc.betas
    root_n = np.sqrt(ds.n)
    dev = root_n * np.abs(draws.draws - est) / s  # (B, J, k)
    if joint:
        c = np.array(bootstrap_critical_value(dev.max(axis=(1, 2)), alpha))
        cc = np.full(ds.k, float(c))
    else:
        cc = np.array([bootstrap_critical_value(dev[:, :, j].max(axis=1), alpha) for j in range(ds.k)])
        c = cc
    cc = np.maximum(cc, 0.0)
    se = s / root_n
    c_pt = np.maximum(np.array([[bootstrap_critical_value(dev[:, j, a], alpha) for a in range(ds.k)]
                                for j in range(len(proc.taus))]), 0.0)
    return UniformBands(proc.taus.copy(), est, est - cc * se, est + cc * se, alpha, c,
                        est - c_pt * se, est + c_pt * se, tuple(draws.column_names))
