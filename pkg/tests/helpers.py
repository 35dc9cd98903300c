"""Shared builders and equivalence checks for the test suite."""

from __future__ import annotations

import numpy as np

from qrproc.core import Dataset, objective

# exact-solution tolerances shared by every equivalence check
COEF_RTOL = 1e-6
OBJ_RTOL = 1e-9


def make_dataset(rng: np.random.Generator, n: int, k: int, kind: str = "gaussian") -> Dataset:
    """Random design with an intercept.

    ``gaussian``: continuous regressors, heteroskedastic noise.
    ``discrete``: integer regressors and integer responses, so ties and
    degenerate optima are common.
    ``mixed``: continuous regressors plus a sparse indicator and heavy-tailed noise.
    """
    if kind == "gaussian":
        Z = rng.standard_normal((n, k - 1))
        y = Z @ rng.normal(size=k - 1) + (1.0 + 0.5 * np.abs(Z[:, 0] if k > 1 else 0.0)) * rng.standard_normal(n)
    elif kind == "discrete":
        Z = rng.integers(0, 4, size=(n, k - 1)).astype(float)
        y = rng.integers(0, 6, size=n).astype(float) + Z.sum(axis=1)
    elif kind == "mixed":
        Z = rng.standard_normal((n, k - 1))
        if k > 2:
            Z[:, -1] = (rng.random(n) < 0.1).astype(float)
            Z[:2, -1] = 1.0
        y = 2.0 + Z @ rng.normal(size=k - 1) + rng.standard_t(3, size=n)
    else:
        raise ValueError(kind)
    X = np.column_stack([np.ones(n), Z])
    return Dataset(y, X)


def same_solution(ds: Dataset, tau: float, beta, beta_ref) -> bool:
    """Coefficients within COEF_RTOL relative, or (for non-unique optima) equal objectives within OBJ_RTOL."""
    beta, beta_ref = np.asarray(beta), np.asarray(beta_ref)
    scale = max(1.0, float(np.abs(beta_ref).max()))
    if np.all(np.abs(beta - beta_ref) <= COEF_RTOL * np.maximum(np.abs(beta_ref), scale)):
        return True
    f, f_ref = objective(ds, tau, beta), objective(ds, tau, beta_ref)
    return abs(f - f_ref) <= OBJ_RTOL * max(1.0, abs(f_ref))


def zero_residuals(ds: Dataset, beta, rtol: float = 1e-9) -> int:
    r = ds.y - ds.X @ np.asarray(beta)
    return int(np.count_nonzero(np.abs(r) <= rtol * (1.0 + np.abs(ds.y).max())))


def tie_aware_moment_bound(ds: Dataset, beta) -> float:
    """max(k, #zero residuals) * max|x| / n.

    The subgradient condition bounds n * |M| by the zero-residual rows'
    contribution; with at most k of them (data in general position) this is
    the k max|x| / n bound.
    """
    return max(ds.k, zero_residuals(ds, beta)) * float(np.abs(ds.X).max()) / ds.n
