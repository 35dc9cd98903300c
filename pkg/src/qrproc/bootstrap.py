"""Empirical and score-multiplier bootstraps of the coefficient process.

Every replicate ``r`` draws from its own stream keyed by (base_seed, r), so a
run is bit-identical whatever the replicate execution order or worker count.
"""

from __future__ import annotations

import csv
import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .core import CoefProcess, Dataset, at_or_below_fit, validate_grid
from .errors import BootstrapError, DomainError, GridError, ParseError, SingularJacobianError
from .onestep import DEFAULT_ONESTEP, EIG_RTOL, JacobianEstimate, OneStepConfig, bandwidth_factors, start_index
from .parallel import map_replicates
from .preprocess import DEFAULT_CONFIG, M_PROCESS, PreprocessConfig, fit_process_preprocess, residual_scale, size_base
from .solver import DEFAULT_OPTIONS, SolverOptions
from .streams import MULTIPLIER, RESAMPLE, replicate_rng

MAX_FAILED_FRACTION = 0.05
MAGIC = b"QRBD"
FORMAT_VERSION = 1


class WeightScheme(str, enum.Enum):
    BAYESIAN_EXPONENTIAL = "bayesian_exponential"
    GAUSSIAN = "gaussian"
    WILD = "wild"
    MULTINOMIAL = "multinomial"


def draw_weights(scheme: WeightScheme | str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Multipliers for one replicate.

    The exponential, Gaussian and wild (N1/sqrt(2) + (N2^2 - 1)/2) draws
    have mean 0 and variance 1. Multinomial weights are Multinomial(n, 1/n)
    counts, used uncentred as resampling weights.
    """
    scheme = WeightScheme(scheme)
    if n < 1:
        raise DomainError("n must be >= 1")
    if scheme is WeightScheme.BAYESIAN_EXPONENTIAL:
        return rng.standard_exponential(n) - 1.0
    if scheme is WeightScheme.GAUSSIAN:
        return rng.standard_normal(n)
    if scheme is WeightScheme.WILD:
        z = rng.standard_normal((2, n))
        return z[0] / np.sqrt(2.0) + (z[1] ** 2 - 1.0) / 2.0
    return rng.multinomial(n, np.full(n, 1.0 / n)).astype(np.float64)


@dataclass(frozen=True, eq=False)
class BootstrapDraws:
    """B x J x k bootstrap coefficients with provenance.

    ``replicates`` lists the replicate indices that succeeded, in order; row
    b of ``draws`` belongs to replicate ``replicates[b]``.
    """

    draws: np.ndarray
    taus: np.ndarray
    base_seed: int
    engine: str
    scheme: str | None = None
    column_names: tuple[str, ...] = ()
    replicates: np.ndarray | None = None
    failed: int = 0
    n: int = 0

    def __post_init__(self) -> None:
        d = np.asarray(self.draws, dtype=np.float64)
        if d.ndim != 3 or d.shape[1] != np.size(self.taus):
            raise DomainError(f"draws must be (B, J, k) with J = {np.size(self.taus)}, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise DomainError("bootstrap draws must be finite")
        object.__setattr__(self, "draws", d)
        object.__setattr__(self, "taus", np.asarray(self.taus, dtype=np.float64))
        if self.replicates is None:
            object.__setattr__(self, "replicates", np.arange(d.shape[0]))
        if not self.column_names:
            object.__setattr__(self, "column_names", tuple(f"x{j}" for j in range(d.shape[2])))

    @property
    def B(self) -> int:
        return self.draws.shape[0]

    @property
    def k(self) -> int:
        return self.draws.shape[2]

    def to_csv(self, path: str | Path) -> None:
        """Long format: replicate, tau, coefficient, value."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "tau", "coefficient", "value"])
            for b, r in enumerate(self.replicates):
                for j, t in enumerate(self.taus):
                    for c, name in enumerate(self.column_names):
                        w.writerow([int(r), repr(float(t)), name, repr(float(self.draws[b, j, c]))])

    def to_binary(self, path: str | Path) -> None:
        """Little-endian block: magic, version, B, J, k, seed, taus, replicate ids, draws."""
        B, J, k = self.draws.shape
        with Path(path).open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQQQq", FORMAT_VERSION, B, J, k, int(self.base_seed)))
            fh.write(self.taus.astype("<f8").tobytes())
            fh.write(np.asarray(self.replicates, dtype="<i8").tobytes())
            fh.write(self.draws.astype("<f8").tobytes())

    @classmethod
    def from_binary(cls, path: str | Path, engine: str = "unknown") -> "BootstrapDraws":
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise ParseError(f"{path}: not a bootstrap draws file", row=0)
        head = struct.calcsize("<IQQQq")
        version, B, J, k, seed = struct.unpack("<IQQQq", raw[4:4 + head])
        if version != FORMAT_VERSION:
            raise ParseError(f"{path}: unsupported format version {version}", row=0)
        off = 4 + head
        need = off + 8 * (J + B + B * J * k)
        if len(raw) != need:
            raise ParseError(f"{path}: expected {need} bytes, found {len(raw)}", row=0)
        taus = np.frombuffer(raw, "<f8", J, off)
        reps = np.frombuffer(raw, "<i8", B, off + 8 * J)
        draws = np.frombuffer(raw, "<f8", B * J * k, off + 8 * (J + B)).reshape(B, J, k)
        return cls(draws.copy(), taus.copy(), seed, engine, replicates=reps.copy())


def _collect(results: list, taus, base_seed, engine, scheme, names, n) -> BootstrapDraws:
    B = len(results)
    ok = [r for r, res in enumerate(results) if res is not None]
    failed = B - len(ok)
    if failed > MAX_FAILED_FRACTION * B:
        raise BootstrapError(f"{failed} of {B} bootstrap replicates failed (ceiling {MAX_FAILED_FRACTION:.0%})",
                             failed=failed, total=B)
    if not ok:
        raise BootstrapError("no bootstrap replicate succeeded", failed=failed, total=B)
    draws = np.stack([results[r] for r in ok])
    return BootstrapDraws(draws, taus, base_seed, engine, scheme, names, np.array(ok), failed, n)


def resample_indices(n: int, base_seed: int, r: int) -> np.ndarray:
    return replicate_rng(base_seed, r, RESAMPLE).integers(0, n, n)


def _sample_process(ds: Dataset, target, cfg, opts) -> CoefProcess:
    if isinstance(target, CoefProcess):
        return target
    if np.ndim(target) == 0:
        target = [float(target)]
    return fit_process_preprocess(ds, target, cfg, opts)


def _pp_task(args, reps: range) -> list:
    At, y, z, taus, beta0, m, base, allowed, rounds, tol, it, step, seed, identity = args
    n = y.size
    out = []
    for r in reps:
        idx = np.arange(n) if identity else resample_indices(n, seed, r)
        betas, status, *_ = _kernels.preprocess_chain(
            np.ascontiguousarray(At[:, idx]), y[idx], z[idx], taus, beta0, True, m, base, allowed, rounds,
            tol, it, step)
        out.append(betas if np.all(status == _kernels.OK) and np.all(np.isfinite(betas)) else None)
    return out


def bootstrap_qr_preprocessed(ds: Dataset, tau_or_grid, B: int, cfg: PreprocessConfig | None = None,
                              opts: SolverOptions | None = None, base_seed: int = 0, workers: int | None = None,
                              identity_resample: bool = False) -> BootstrapDraws:
    """Exact empirical bootstrap, each replicate solved with preprocessing.

    ``tau_or_grid`` may be a quantile, a grid, or an already fitted sample
    process. In every replicate the first quantile is preprocessed from the
    sample estimate and later ones are chained from the replicate's previous
    fit. The residual scale z is the sample's, indexed by the resample.
    ``identity_resample`` replaces the resample by the original rows (a test
    hook).
    """
    if B < 1:
        raise DomainError("B must be >= 1")
    cfg = cfg or DEFAULT_CONFIG
    opts = opts or DEFAULT_OPTIONS
    proc = _sample_process(ds, tau_or_grid, cfg, opts)
    taus = np.ascontiguousarray(proc.taus)
    args = (ds.At, ds.y, residual_scale(ds), taus, proc.fits[0].beta.copy(), cfg.multiplier(M_PROCESS),
            size_base(ds.n, ds.k, cfg.exponent("one_half")), cfg.allowed_bad_signs, cfg.max_rounds,
            opts.duality_gap_tol, opts.max_iter, opts.step_fraction, base_seed, identity_resample)
    results = map_replicates(_pp_task, args, B, workers)
    return _collect(results, taus, base_seed, "preprocess", None, ds.column_names, ds.n)


def _onestep_task(args, reps: range) -> list:
    (At, y, z, taus, s, beta_s, hq, m, base, allowed, rounds, tol, it, step, ridge, col_scale, seed) = args
    n = y.size
    out = []
    for r in reps:
        idx = resample_indices(n, seed, r)
        Ab = np.ascontiguousarray(At[:, idx])
        yb = y[idx]
        b0, st, *_ = _kernels.preprocess_solve(Ab, yb, z[idx], taus[s], beta_s, m, base, allowed, rounds, 0,
                                               tol, it, step)
        if st != _kernels.OK:
            out.append(None)
            continue
        betas, _, _, _, _, _, status, _ = _kernels.onestep_march(Ab, yb, taus, s, b0, hq, EIG_RTOL, ridge, col_scale)
        out.append(betas if status == _kernels.ONESTEP_OK and np.all(np.isfinite(betas)) else None)
    return out


def bootstrap_onestep(ds: Dataset, grid, B: int, base_seed: int = 0, cfg: OneStepConfig | None = None,
                      proc: CoefProcess | None = None, pp_cfg: PreprocessConfig | None = None,
                      opts: SolverOptions | None = None, workers: int | None = None) -> BootstrapDraws:
    """Empirical bootstrap of the one-step process.

    Each replicate fits the start quantile exactly (preprocessed from the
    sample estimate there) and then marches with one-step updates.
    Replicates whose march hits a near-singular Jacobian count as failed.
    ``proc`` supplies the sample fit at the start quantile if available.
    """
    if B < 1:
        raise DomainError("B must be >= 1")
    cfg = cfg or DEFAULT_ONESTEP
    pp_cfg = pp_cfg or DEFAULT_CONFIG
    opts = opts or DEFAULT_OPTIONS
    grid, _ = validate_grid(grid, ds.n, ds.k)
    taus = np.ascontiguousarray(grid.taus)
    s = start_index(taus, cfg.start_tau)
    if proc is not None and np.array_equal(proc.taus, taus):
        beta_s = proc.fits[s].beta.copy()
    else:
        beta_s = fit_process_preprocess(ds, [taus[s]], pp_cfg, opts).fits[0].beta.copy()
    args = (ds.At, ds.y, residual_scale(ds), taus, s, beta_s, bandwidth_factors(taus, ds.n, cfg.alpha),
            pp_cfg.multiplier(M_PROCESS), size_base(ds.n, ds.k, pp_cfg.exponent("one_half")),
            pp_cfg.allowed_bad_signs, pp_cfg.max_rounds, opts.duality_gap_tol, opts.max_iter, opts.step_fraction,
            1e-6 if cfg.ridge else 0.0, np.sqrt(np.mean(ds.X ** 2, axis=0)), base_seed)
    results = map_replicates(_onestep_task, args, B, workers)
    return _collect(results, taus, base_seed, "onestep", None, ds.column_names, ds.n)


def score_matrix(ds: Dataset, proc: CoefProcess) -> np.ndarray:
    """psi_ij = tau_j - 1(y_i <= x_i' beta(tau_j)), shape (n, J)."""
    return proc.taus[None, :] - at_or_below_fit(ds, proc.betas).astype(np.float64)


def inverse_jacobians(proc: CoefProcess) -> np.ndarray:
    if proc.jacobians is None:
        raise DomainError("the score bootstrap needs a process with Jacobians (see onestep.with_jacobians)")
    out = []
    for t, Jm in zip(proc.taus, proc.jacobians):
        est = JacobianEstimate(float(t), 1.0, Jm)
        if est.is_singular():
            raise SingularJacobianError(f"Jacobian is near singular at tau={t:g}", tau=float(t),
                                        min_eigenvalue=est.min_eigenvalue)
        out.append(np.linalg.inv(est.J_hat))
    return np.stack(out)


def _score_task(args, reps: range) -> list:
    X, psi, Jinv, betas, scheme, seed, sign, zero = args
    n = X.shape[0]
    out = []
    for r in reps:
        xi = np.zeros(n) if zero else draw_weights(scheme, n, replicate_rng(seed, r, MULTIPLIER))
        S = (xi[:, None] * psi).T @ X / n  # (J, k): (1/n) sum xi_i psi_ij x_i
        out.append(betas + sign * np.einsum("jab,jb->ja", Jinv, S))
    return out


def score_multiplier_bootstrap(ds: Dataset, proc: CoefProcess, B: int,
                               scheme: WeightScheme | str = WeightScheme.GAUSSIAN, base_seed: int = 0,
                               workers: int | None = None, zero_weights: bool = False,
                               sign: int = 1) -> BootstrapDraws:
    """beta*(tau) = beta(tau) + J(tau)^{-1} (1/n) sum xi_i (tau - 1(y_i <= x_i' beta(tau))) x_i.

    One multiplier vector per replicate, shared by all grid points. ``sign``
    = -1 flips the perturbation; ``zero_weights`` sets every multiplier to 0
    (a test hook).
    """
    if B < 1:
        raise DomainError("B must be >= 1")
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    scheme = WeightScheme(scheme)
    Jinv = inverse_jacobians(proc)
    args = (ds.X, score_matrix(ds, proc), Jinv, proc.betas, scheme, base_seed, float(sign), zero_weights)
    results = map_replicates(_score_task, args, B, workers)
    return _collect(results, proc.taus, base_seed, "score", scheme.value, ds.column_names, ds.n)


def check_alignment(proc: CoefProcess, draws: BootstrapDraws) -> None:
    if draws.taus.shape != proc.taus.shape or not np.allclose(draws.taus, proc.taus, rtol=0, atol=1e-12):
        raise GridError("bootstrap draws and process are on different grids")
    if draws.k != proc.betas.shape[1]:
        raise GridError("bootstrap draws and process have different numbers of coefficients")
