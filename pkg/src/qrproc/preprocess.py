"""Preprocessing: solve a reduced problem whose far-away rows are globbed.

Rows whose residual sign can be guessed from a preliminary fit are replaced
by two aggregated pseudo-rows. After solving, the guessed signs are checked;
wrong guesses are moved back into the kept set and the reduced problem is
re-solved, so the final answer is the exact full-sample solution.

Two flavours share the machinery:

* ``fit_single_pk``: preliminary fit from a random subsample, kept set of
  size m (k n)^{2/3} with m = 0.8.
* ``fit_process_preprocess``: along a grid, the previous quantile's fit is
  the preliminary estimate; kept set m (k n)^{1/2} with m = 3.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import _kernels
from .core import CoefProcess, Dataset, Engine, QrFit, _check_tau, make_fit, validate_grid
from .errors import ConvergenceError, DomainError, RankError
from .solver import DEFAULT_OPTIONS, SolverOptions, solve_qr

SizeExponent = Literal["two_thirds", "one_half"]

M_SINGLE = 0.8
M_PROCESS = 3.0


@dataclass(frozen=True)
class PreprocessConfig:
    m: float | None = None
    allowed_bad_signs: int = 0
    max_rounds: int = 10
    kept_size_exponent: SizeExponent | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.m is not None and not self.m > 0:
            raise DomainError("m must be positive")
        if self.max_rounds < 1:
            raise DomainError("max_rounds must be >= 1")
        if self.allowed_bad_signs < 0:
            raise DomainError("allowed_bad_signs must be >= 0")

    def multiplier(self, default: float) -> float:
        return float(self.m) if self.m is not None else default

    def exponent(self, default: SizeExponent) -> SizeExponent:
        return self.kept_size_exponent or default


DEFAULT_CONFIG = PreprocessConfig()


def size_base(n: int, k: int, exponent: SizeExponent) -> float:
    p = 2.0 / 3.0 if exponent == "two_thirds" else 0.5
    return float(k * n) ** p


@dataclass(frozen=True)
class Partition:
    low: np.ndarray
    high: np.ndarray
    kept: np.ndarray


def residual_scale(ds: Dataset) -> np.ndarray:
    """Leverage-based scale sqrt(x_i' (X'X/n)^{-1} x_i) for every residual."""
    z = ds.leverage_scale
    if not np.all(z > 0.0):
        raise RankError("residual scale has non-positive entries")
    return z


def partition(residuals, z, tau: float, M: int) -> Partition:
    """Split rows by the tau -/+ M/(2n) type-1 quantiles of residual/z."""
    tau = _check_tau(tau)
    r = np.asarray(residuals, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if M <= 0:
        raise DomainError(f"kept size M must be positive, got {M}")
    M = min(int(M), r.size)
    lab = _kernels.partition_labels(r / z, tau, M)
    return Partition(np.flatnonzero(lab < 0), np.flatnonzero(lab > 0), np.flatnonzero(lab == 0))


def _unpack(ds: Dataset, tau: float, out, engine: Engine) -> QrFit:
    beta, status, rounds, fixups, restarts, kept, iters, cert, used_full = out
    if status != _kernels.OK:
        raise ConvergenceError(f"preprocessed solve failed at tau={tau} (status {status})", beta=beta)
    return make_fit(ds, tau, beta, engine, iterations=iters, fixups=fixups, rounds=int(rounds),
                    restarts=int(restarts), kept=int(kept), certified=bool(cert), fallback=bool(used_full))


def solve_preprocessed(ds: Dataset, tau: float, prelim_beta, cfg: PreprocessConfig | None = None,
                       opts: SolverOptions | None = None) -> QrFit:
    """Exact fit at ``tau`` using ``prelim_beta`` to guess residual signs.

    Kept size is m (k n)^{1/2} unless the config says otherwise. If the
    round budget runs out, the full problem is solved instead.
    """
    tau = _check_tau(tau)
    cfg = cfg or DEFAULT_CONFIG
    opts = opts or DEFAULT_OPTIONS
    prelim = np.asarray(prelim_beta, dtype=np.float64).reshape(-1)
    if prelim.size != ds.k or not np.all(np.isfinite(prelim)):
        raise DomainError("prelim_beta must be a finite vector of length k")
    base = size_base(ds.n, ds.k, cfg.exponent("one_half"))
    out = _kernels.preprocess_solve(
        ds.At, ds.y, residual_scale(ds), tau, prelim, cfg.multiplier(M_PROCESS), base,
        cfg.allowed_bad_signs, cfg.max_rounds, 0, opts.duality_gap_tol, opts.max_iter, opts.step_fraction)
    return _unpack(ds, tau, out, Engine.PREPROCESS)


def subsample_size(n: int, k: int) -> int:
    return int(round(size_base(n, k, "two_thirds")))


def fit_single_pk(ds: Dataset, tau: float, cfg: PreprocessConfig | None = None,
                  opts: SolverOptions | None = None) -> QrFit:
    """Single-quantile preprocessing with a subsample-based preliminary fit."""
    tau = _check_tau(tau)
    cfg = cfg or DEFAULT_CONFIG
    opts = opts or DEFAULT_OPTIONS
    size = subsample_size(ds.n, ds.k)
    if ds.n <= size:
        return solve_qr(ds, tau, opts)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5B5]))
    m = cfg.multiplier(M_SINGLE)
    base = size_base(ds.n, ds.k, cfg.exponent("two_thirds"))
    z = residual_scale(ds)
    restarts = 0
    while size < ds.n and restarts < cfg.max_rounds:
        rows = np.sort(rng.choice(ds.n, size=size, replace=False))
        sub = ds.subset(rows)
        prelim = _subsample_fit(sub, tau, opts)
        if prelim is not None:
            out = _kernels.preprocess_solve(
                ds.At, ds.y, z, tau, prelim, m, base, cfg.allowed_bad_signs, cfg.max_rounds, 1,
                opts.duality_gap_tol, opts.max_iter, opts.step_fraction)
            if out[1] != _kernels.RESTART:
                fit = _unpack(ds, tau, out, Engine.PREPROCESS)
                fit.info.update(subsample=size, pk_restarts=restarts)
                return fit
        restarts += 1
        size *= 2
        m *= 2.0
    fit = solve_qr(ds, tau, opts)
    fit.fixups = cfg.max_rounds
    fit.info.update(fallback=True, pk_restarts=restarts)
    return fit


def _subsample_fit(sub: Dataset, tau: float, opts: SolverOptions) -> np.ndarray | None:
    beta, it, gap, status, cert = _kernels.solve_full(
        sub.At, sub.y, tau, np.zeros(sub.k), False, opts.duality_gap_tol, opts.max_iter,
        opts.step_fraction, opts.polish)
    if status == _kernels.NUMERICAL or not np.all(np.isfinite(beta)):
        return None
    return beta


def fit_process_preprocess(ds: Dataset, grid, cfg: PreprocessConfig | None = None,
                           opts: SolverOptions | None = None) -> CoefProcess:
    """Exact fits on an increasing grid, each seeded by its predecessor."""
    cfg = cfg or DEFAULT_CONFIG
    opts = opts or DEFAULT_OPTIONS
    grid, warns = validate_grid(grid, ds.n, ds.k)
    taus = grid.taus
    first = fit_single_pk(ds, taus[0], cfg, opts)
    fits = [first]
    if taus.size > 1:
        base = size_base(ds.n, ds.k, cfg.exponent("one_half"))
        betas, status, rounds, fixups, kept, iters, full = _kernels.preprocess_chain(
            ds.At, ds.y, residual_scale(ds), taus, first.beta, False, cfg.multiplier(M_PROCESS), base,
            cfg.allowed_bad_signs, cfg.max_rounds, opts.duality_gap_tol, opts.max_iter, opts.step_fraction)
        for j in range(1, taus.size):
            if status[j] != _kernels.OK:
                raise ConvergenceError(f"preprocessed solve failed at tau={taus[j]}", beta=betas[j])
            fits.append(make_fit(ds, taus[j], betas[j], Engine.PREPROCESS, iterations=iters[j],
                                 fixups=fixups[j], rounds=int(rounds[j]), kept=int(kept[j]),
                                 fallback=bool(full[j])))
    return CoefProcess(grid, fits, info={"warnings": warns, "engine": "preprocess"})
