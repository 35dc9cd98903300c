"""Data-generating processes and Monte Carlo / benchmark harnesses."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.stats import norm

from . import _kernels
from .core import Dataset, validate_grid
from .errors import DomainError
from .onestep import DEFAULT_ONESTEP, OneStepConfig, march, start_index
from .preprocess import fit_process_preprocess
from .parallel import map_replicates
from .streams import MC_DATA, replicate_rng

SD_U = 1.0 / np.sqrt(3.0)


class Design(Protocol):
    name: str

    def sample(self, n: int, rng: np.random.Generator) -> Dataset: ...

    def beta(self, tau: float) -> np.ndarray: ...


@dataclass(frozen=True)
class HeteroskedasticDesign:
    """y = x + (0.1 + x^2) u, x ~ N(0, 1), u ~ N(0, 1/3); regressors [1, x, x^2].

    Q_y(tau | x) = x + (0.1 + x^2) q with q the tau-quantile of u, so the
    coefficients are (0.1 q, 1, q).
    """

    name: str = "heteroskedastic"
    k: int = 3

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        if n < 1:
            raise DomainError("n must be >= 1")
        x = rng.standard_normal(n)
        u = SD_U * rng.standard_normal(n)
        y = x + (0.1 + x * x) * u
        X = np.column_stack([np.ones(n), x, x * x])
        return Dataset(y, X, ("intercept", "x", "x2"), check=n >= 3)

    def beta(self, tau: float) -> np.ndarray:
        q = SD_U * norm.ppf(tau)
        return np.array([0.1 * q, 1.0, q])

    def _moments(self, tau: float, nodes: int = 80) -> tuple[np.ndarray, np.ndarray]:
        x, w = hermegauss(nodes)
        w = w / w.sum()
        Z = np.stack([np.ones_like(x), x, x * x], axis=1)
        dens = norm.pdf(norm.ppf(tau)) / (SD_U * (0.1 + x * x))
        J = (Z * (w * dens)[:, None]).T @ Z
        Q = (Z * w[:, None]).T @ Z
        return J, Q

    def jacobian(self, tau: float) -> np.ndarray:
        """E[f(x'beta(tau) | x) x x'] by Gauss-Hermite quadrature."""
        return self._moments(tau)[0]

    def asymptotic_covariance(self, tau: float) -> np.ndarray:
        """tau (1 - tau) J^{-1} E[x x'] J^{-1}, the covariance of sqrt(n)(beta_hat - beta)."""
        J, Q = self._moments(tau)
        Ji = np.linalg.inv(J)
        return tau * (1.0 - tau) * Ji @ Q @ Ji


def dgp_hagemann(n: int, rng: np.random.Generator) -> Dataset:
    return HeteroskedasticDesign().sample(n, rng)


@dataclass(frozen=True)
class LocationScaleDesign:
    """Synthetic wage-style design: y = x'b + (x'g) u with u ~ N(0, 1).

    Covariates after the intercept alternate between Uniform(0, 1) variables
    and 0/1 indicators whose probabilities fall geometrically from 0.5 to
    ``rare_prob``. All covariates are non-negative and g >= 0 with g_0 = 1,
    so x'g > 0 and beta(tau) = b + g Phi^{-1}(tau) exactly. ``scale_slope``
    multiplies the non-intercept entries of g; zero gives a pure location
    model. Indicator columns with fewer than two ones are redrawn, which
    keeps X full rank without changing the conditional model.
    """

    k: int = 20
    rare_prob: float = 0.007
    scale_slope: float = 1.0
    name: str = "location_scale"

    def __post_init__(self) -> None:
        if self.k < 2:
            raise DomainError("location-scale design needs k >= 2")
        if not 0.0 < self.rare_prob <= 0.5:
            raise DomainError("rare_prob must lie in (0, 0.5]")
        if self.scale_slope < 0:
            raise DomainError("scale_slope must be >= 0")

    def _layout(self) -> tuple[np.ndarray, np.ndarray]:
        cols = np.arange(1, self.k)
        is_ind = cols % 2 == 0
        n_ind = int(is_ind.sum())
        probs = np.zeros(self.k - 1)
        if n_ind:
            probs[is_ind] = np.geomspace(0.5, self.rare_prob, n_ind) if n_ind > 1 else [self.rare_prob]
        return is_ind, probs

    def coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        j = np.arange(self.k)
        b = np.where(j == 0, 1.0, 0.5 * np.cos(j))
        g = np.where(j == 0, 1.0, self.scale_slope * 0.25 * (1.0 + np.sin(j)))
        return b, g

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        if n < 1:
            raise DomainError("n must be >= 1")
        is_ind, probs = self._layout()
        X = np.empty((n, self.k))
        X[:, 0] = 1.0
        for c in range(1, self.k):
            if is_ind[c - 1]:
                col = (rng.random(n) < probs[c - 1]).astype(float)
                while col.sum() < 2 and n >= 2 * self.k:
                    col = (rng.random(n) < probs[c - 1]).astype(float)
                X[:, c] = col
            else:
                X[:, c] = rng.random(n)
        b, g = self.coefficients()
        u = rng.standard_normal(n)
        y = X @ b + (X @ g) * u
        return Dataset(y, X, tuple(["intercept", *[f"x{c}" for c in range(1, self.k)]]), check=n >= 2 * self.k)

    def beta(self, tau: float) -> np.ndarray:
        b, g = self.coefficients()
        return b + g * norm.ppf(tau)

    def jacobian(self, tau: float, draws: int = 400_000, seed: int = 0) -> np.ndarray:
        """E[f(x'beta(tau) | x) x x'] = E[phi(q) / (x'g) x x'] by Monte Carlo over the covariates."""
        ds = self.sample(draws, np.random.default_rng(seed))
        _, g = self.coefficients()
        dens = norm.pdf(norm.ppf(tau)) / (ds.X @ g)
        return (ds.X * dens[:, None]).T @ ds.X / draws


def dgp_location_scale(n: int, k: int, rng: np.random.Generator, rare_prob: float = 0.007,
                       scale_slope: float = 1.0) -> Dataset:
    return LocationScaleDesign(k, rare_prob, scale_slope).sample(n, rng)


def true_process(design: Design, taus) -> np.ndarray:
    return np.vstack([design.beta(t) for t in taus])


def rate_se(p: float, R: int) -> float:
    return float(np.sqrt(p * (1.0 - p) / R)) if R > 0 else float("nan")


@dataclass
class McReport:
    design: dict
    n: int
    replications: int
    seed: int
    metrics: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(asdict(self), indent=indent, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _design_dict(design) -> dict:
    return asdict(design) if hasattr(design, "__dataclass_fields__") else {"name": getattr(design, "name", "?")}


def accuracy_measures(est: np.ndarray, truth: np.ndarray) -> dict[str, np.ndarray]:
    """Per-parameter bias^2, variance, MSE, |median bias|, MAD and MAE over replications (axis 0)."""
    err = est - truth
    med = np.median(est, axis=0)
    return {
        "bias2": np.mean(err, axis=0) ** 2,
        "variance": np.var(est, axis=0),
        "mse": np.mean(err ** 2, axis=0),
        "median_bias": np.abs(med - truth),
        "mad": np.median(np.abs(est - med), axis=0),
        "mae": np.median(np.abs(err), axis=0),
    }


def _accuracy_task(args, reps: range) -> list:
    design, n, grid, s, seed, cfg = args
    taus = grid.taus
    out = []
    for r in reps:
        ds = design.sample(n, replicate_rng(seed, r, MC_DATA))
        t0 = time.perf_counter()
        proc = fit_process_preprocess(ds, grid)
        t1 = time.perf_counter()
        res = march(ds, taus, s, proc.fits[s].beta, cfg)
        t2 = time.perf_counter()
        out.append((proc.betas, res.betas, res.converged(cfg.moment_tol), t1 - t0, (t2 - t1) + (t1 - t0) / taus.size))
    return out


def mc_relative_accuracy(design: Design, n: int, grid: Sequence[float], R: int, seed: int,
                         cfg: OneStepConfig = DEFAULT_ONESTEP, reference: str = "exact",
                         workers: int | None = None) -> McReport:
    """One-step process against the exact process over R simulated samples.

    Measures are computed per (tau, coefficient) over the replications in
    which the one-step march converged, then averaged; relative measures
    are averages of per-parameter ratios. ``reference="onestep"`` compares
    the one-step estimator with itself (a harness check: ratios are 1).
    The one-step time charges the exact start fit as one grid point's share
    of the exact process time.
    """
    if R < 1:
        raise DomainError("R must be >= 1")
    if reference not in ("exact", "onestep"):
        raise DomainError(f"reference must be 'exact' or 'onestep', got {reference!r}")
    grid, _ = validate_grid(grid, n, getattr(design, "k", 2))
    taus = grid.taus
    truth = true_process(design, taus)
    s = start_index(taus, cfg.start_tau)
    results = map_replicates(_accuracy_task, (design, n, grid, s, seed, cfg), R, workers)
    exact = np.stack([res[0] for res in results])
    onestep = np.stack([res[1] for res in results])
    conv = np.array([res[2] for res in results], dtype=bool)
    keep = conv if conv.any() else np.ones(R, dtype=bool)
    ref = onestep if reference == "onestep" else exact
    m_ref = accuracy_measures(ref[keep], truth)
    m_one = accuracy_measures(onestep[keep], truth)
    metrics: dict = {"proportion_converged": float(conv.mean()),
                     "proportion_converged_se": rate_se(float(conv.mean()), R)}
    for key in m_ref:
        metrics[f"{key}_exact"] = float(m_ref[key].mean())
        metrics[f"{key}_onestep"] = float(m_one[key].mean())
    for key in ("mse", "mae"):
        metrics[f"relative_{key}"] = float(np.mean(m_one[key] / m_ref[key]))
    curves = {"taus": taus.tolist(),
              "relative_mae": np.mean(m_one["mae"] / m_ref["mae"], axis=1).tolist()}
    timing = {"exact_seconds": float(sum(res[3] for res in results)),
              "onestep_seconds": float(sum(res[4] for res in results))}
    return McReport(_design_dict(design), n, R, seed, metrics, curves, timing)


POINTWISE_METHODS = ("kernel", "empirical", "empirical_onestep", "score", "score_onestep")
FUNCTIONAL_METHODS = ("empirical", "empirical_onestep", "multiplier", "multiplier_onestep")
TEST_KINDS = ("KS", "CvM")
LOCAL_ALTERNATIVE_N = 100


def local_alternative(design: HeteroskedasticDesign, tau: float, coef: int, at_n: int = LOCAL_ALTERNATIVE_N) -> float:
    """False null beta_j(tau) + z_{0.975} sd_j / sqrt(at_n), sd_j the asymptotic standard deviation.

    A two-sided 5% test has power about one half against it at n = at_n, so
    the same value separates methods at smaller n and is rejected almost
    surely at n = 1000.
    """
    sd = float(np.sqrt(design.asymptotic_covariance(tau)[coef, coef]))
    return float(design.beta(tau)[coef] + norm.ppf(0.975) * sd / np.sqrt(at_n))


@dataclass(frozen=True)
class PointwiseStudy:
    """Wald tests of one coefficient at one quantile (true and false null).

    Bootstrap methods use the bootstrap standard deviation as the standard
    error. One-step methods march from the median to ``tau`` in steps of
    ``step``.
    """

    tau: float = 0.5
    coef: int = 2
    false_null: float | None = None
    methods: tuple[str, ...] = ("kernel", "empirical", "score")
    B_empirical: int = 100
    B_score: int = 250
    scheme: str = "gaussian"
    step: float = 0.01

    def __post_init__(self) -> None:
        bad = set(self.methods) - set(POINTWISE_METHODS)
        if bad:
            raise DomainError(f"unknown pointwise methods {sorted(bad)}")
        if not 0.0 < self.tau < 1.0:
            raise DomainError("tau must lie in (0, 1)")
        if self.B_empirical < 2 or self.B_score < 2:
            raise DomainError("bootstrap sizes must be >= 2")


@dataclass(frozen=True)
class FunctionalStudy:
    """KS / CvM tests over a grid: a true null on one coefficient, a false one on another.

    Defaults test the x-slope against its true constant value 1 (size) and
    the x^2-slope against zero (power), the x^2-slope being a non-constant
    function of tau.
    """

    grid: tuple[float, ...] = tuple(np.round(np.arange(0.10, 0.9001, 0.01), 2).tolist())
    size_coef: int = 1
    size_null: float = 1.0
    power_coef: int = 2
    power_null: float = 0.0
    methods: tuple[str, ...] = ("empirical", "multiplier")
    kinds: tuple[str, ...] = TEST_KINDS
    B: int = 250
    scheme: str = "gaussian"

    def __post_init__(self) -> None:
        bad = set(self.methods) - set(FUNCTIONAL_METHODS)
        if bad:
            raise DomainError(f"unknown functional methods {sorted(bad)}")
        if set(self.kinds) - set(TEST_KINDS):
            raise DomainError(f"kinds must be among {TEST_KINDS}")
        if self.B < 2:
            raise DomainError("B must be >= 2")


def _onestep_grid(tau: float, step: float) -> np.ndarray:
    """Grid from the median to ``tau`` in steps of ``step``, ``tau`` included."""
    m = int(round(abs(tau - 0.5) / step))
    pts = 0.5 + np.sign(tau - 0.5) * step * np.arange(m + 1)
    pts[-1] = tau
    return np.unique(np.round(pts, 12))


def _rates(rows: list[dict], keys: list[str]) -> dict:
    out = {}
    for key in keys:
        vals = np.array([row[key] for row in rows if key in row], dtype=float)
        p = float(vals.mean()) if vals.size else float("nan")
        out[key] = {"rate": p, "se": rate_se(p, vals.size) if vals.size else float("nan"),
                    "trials": int(vals.size)}
    return out


def _pointwise_task(args, reps: range) -> list:
    from . import bootstrap as bs
    from . import inference as inf
    from .core import CoefProcess, Engine, QuantileGrid, make_fit
    from .onestep import estimate_jacobian, with_jacobians
    from .streams import MC_BOOT, replicate_seed

    design, n, study, alpha, seed, truth, false_null = args
    tau, j = study.tau, study.coef
    methods = set(study.methods)
    scheme = bs.WeightScheme(study.scheme)
    og = _onestep_grid(tau, study.step)
    s = start_index(og, None)
    out = []
    for r in reps:
        ds = design.sample(n, replicate_rng(seed, r, MC_DATA))
        bseed = replicate_seed(seed, r, MC_BOOT)
        proc = fit_process_preprocess(ds, [tau])
        b_hat = proc.fits[0].beta
        est_se: dict[str, tuple[float, float]] = {}
        if "kernel" in methods:
            V = inf.pointwise_variance(estimate_jacobian(ds, tau, b_hat, alpha),
                                       inf.sigma_hat(ds, b_hat, b_hat, tau, tau))
            est_se["kernel"] = (b_hat[j], float(np.sqrt(V[j, j] / n)))
        if "empirical" in methods:
            d = _try(bs.bootstrap_qr_preprocessed, ds, proc, study.B_empirical, base_seed=bseed, workers=1)
            if d is not None:
                est_se["empirical"] = (b_hat[j], float(d.draws[:, 0, j].std(ddof=1)))
        if "score" in methods:
            d = _try(bs.score_multiplier_bootstrap, ds, with_jacobians(ds, proc, alpha), study.B_score, scheme,
                     bseed, workers=1)
            if d is not None:
                est_se["score"] = (b_hat[j], float(d.draws[:, 0, j].std(ddof=1)))
        if methods & {"empirical_onestep", "score_onestep"}:
            start = fit_process_preprocess(ds, [og[s]]).fits[0].beta
            res = march(ds, og, s, start)
            if res.status == _kernels.ONESTEP_OK:
                b_os = res.betas[-1]
                if "empirical_onestep" in methods:
                    d = _try(bs.bootstrap_onestep, ds, og, study.B_empirical, base_seed=bseed, workers=1)
                    if d is not None:
                        est_se["empirical_onestep"] = (b_os[j], float(d.draws[:, -1, j].std(ddof=1)))
                if "score_onestep" in methods:
                    p1 = CoefProcess(QuantileGrid(np.array([tau])), [make_fit(ds, tau, b_os, Engine.ONESTEP)])
                    d = _try(bs.score_multiplier_bootstrap, ds, with_jacobians(ds, p1, alpha), study.B_score,
                             scheme, bseed, workers=1)
                    if d is not None:
                        est_se["score_onestep"] = (b_os[j], float(d.draws[:, 0, j].std(ddof=1)))
        row = {}
        for m, (est, se) in est_se.items():
            if se > 0.0 and np.isfinite(se):
                row[f"{m}_size"] = inf.wald_test(est, se, truth, alpha).reject
                row[f"{m}_power"] = inf.wald_test(est, se, false_null, alpha).reject
        out.append(row)
    return out


def _try(fn, *args, **kwargs):
    """Run one inference step of a Monte Carlo trial; a numerical failure drops the trial for that method."""
    from .errors import NumericalError

    try:
        return fn(*args, **kwargs)
    except NumericalError:
        return None


def mc_pointwise(design: HeteroskedasticDesign, n: int, study: PointwiseStudy, R: int, alpha: float = 0.05,
                 seed: int = 0, workers: int | None = None) -> McReport:
    """Rejection rates of a true and a false null on one coefficient at one quantile.

    Trials in which a method fails numerically are left out of that
    method's rate; the ``trials`` field counts those that were kept.
    """
    if R < 1:
        raise DomainError("R must be >= 1")
    tau, j = study.tau, study.coef
    truth = float(design.beta(tau)[j])
    false_null = study.false_null if study.false_null is not None else local_alternative(design, tau, j)
    t0 = time.perf_counter()
    rows = map_replicates(_pointwise_task, (design, n, study, alpha, seed, truth, false_null), R, workers)
    keys = [f"{m}_{h}" for m in study.methods for h in ("size", "power")]
    metrics = _rates(rows, keys)
    metrics["truth"] = truth
    metrics["false_null"] = false_null
    return McReport(_design_dict(design) | {"study": asdict(study), "alpha": alpha}, n, R, seed, metrics,
                    timing={"seconds": time.perf_counter() - t0})


def _functional_task(args, reps: range) -> list:
    from . import bootstrap as bs
    from . import inference as inf
    from .core import CoefProcess, Engine, make_fit
    from .onestep import with_jacobians
    from .streams import MC_BOOT, replicate_seed

    design, n, study, alpha, seed, grid = args
    taus = grid.taus
    s = start_index(taus, None)
    scheme = bs.WeightScheme(study.scheme)
    out = []
    for r in reps:
        ds = design.sample(n, replicate_rng(seed, r, MC_DATA))
        bseed = replicate_seed(seed, r, MC_BOOT)
        exact = fit_process_preprocess(ds, grid)
        onestep = None
        if any(m.endswith("onestep") for m in study.methods):
            res = march(ds, taus, s, exact.fits[s].beta)
            if res.status == _kernels.ONESTEP_OK:
                onestep = CoefProcess(grid, [make_fit(ds, t, b, Engine.ONESTEP) for t, b in zip(taus, res.betas)])
        row = {}
        for m in study.methods:
            base = onestep if m.endswith("onestep") else exact
            if base is None:
                continue
            withJ = _try(with_jacobians, ds, base, alpha)
            if withJ is None:
                continue
            scales = inf.process_scales(ds, withJ, alpha)
            if m == "empirical":
                d = _try(bs.bootstrap_qr_preprocessed, ds, base, study.B, base_seed=bseed, workers=1)
            elif m == "empirical_onestep":
                d = _try(bs.bootstrap_onestep, ds, taus, study.B, base_seed=bseed, proc=exact, workers=1)
            else:
                d = _try(bs.score_multiplier_bootstrap, ds, withJ, study.B, scheme, bseed, workers=1)
            if d is None:
                continue
            for kind in study.kinds:
                for h, coef, null in (("size", study.size_coef, study.size_null),
                                      ("power", study.power_coef, study.power_null)):
                    t = inf.functional_test(ds, base, d, coef, null, kind, alpha, scales, min_replicates=2)
                    row[f"{m}_{kind}_{h}"] = t.reject
        out.append(row)
    return out


def mc_functional(design: HeteroskedasticDesign, n: int, study: FunctionalStudy, R: int, alpha: float = 0.05,
                  seed: int = 0, workers: int | None = None) -> McReport:
    """Rejection rates of KS / CvM tests of a true and a false functional null."""
    if R < 1:
        raise DomainError("R must be >= 1")
    grid, _ = validate_grid(list(study.grid), n, design.k)
    t0 = time.perf_counter()
    rows = map_replicates(_functional_task, (design, n, study, alpha, seed, grid), R, workers)
    keys = [f"{m}_{kind}_{h}" for m in study.methods for kind in study.kinds for h in ("size", "power")]
    return McReport(_design_dict(design) | {"study": asdict(study), "alpha": alpha}, n, R, seed,
                    _rates(rows, keys), timing={"seconds": time.perf_counter() - t0})


def mc_size_power(design: HeteroskedasticDesign, n: int, study: PointwiseStudy | FunctionalStudy, R: int,
                  alpha: float = 0.05, seed: int = 0, workers: int | None = None) -> McReport:
    """Dispatch to :func:`mc_pointwise` or :func:`mc_functional` by study type."""
    if isinstance(study, PointwiseStudy):
        return mc_pointwise(design, n, study, R, alpha, seed, workers)
    if isinstance(study, FunctionalStudy):
        return mc_functional(design, n, study, R, alpha, seed, workers)
    raise DomainError(f"unknown study type {type(study).__name__}")


BENCH_PANELS = ("single", "process", "bootstrap")


@dataclass
class BenchReport:
    """Median wall times (seconds) per panel and engine, with ratios to the naive engine."""

    n: int
    k: int
    grid_size: int
    B: int
    repetitions: int
    seed: int
    times: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(asdict(self), indent=indent, default=_json_default)

    def to_markdown(self) -> str:
        titles = {"single": "Single quantile (tau = 0.5)",
                  "process": f"Process ({self.grid_size} quantiles)",
                  "bootstrap": f"Bootstrap (B = {self.B}, tau = 0.5)"}
        lines = [f"n = {self.n}, k = {self.k}, median of {self.repetitions} repetitions", "",
                 "| panel | engine | seconds | speed-up vs naive |", "|---|---|---|---|"]
        for panel, times in self.times.items():
            for engine, sec in times.items():
                ratio = self.ratios.get(panel, {}).get(engine)
                shown = "-" if ratio is None else f"{ratio:.3g}"
                lines.append(f"| {titles[panel]} | {engine} | {sec:.4g} | {shown} |")
        return "\n".join(lines) + "\n"


def _median_time(fn: Callable[[], object], repetitions: int) -> float:
    fn()  # warm-up: compilation and caches
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_engines(n: int, k: int, grid: Sequence[float] | None = None, B: int = 50, repetitions: int = 3,
                  seed: int = 0, panels: Sequence[str] = BENCH_PANELS,
                  engines: dict[str, Sequence[str]] | None = None) -> BenchReport:
    """Time the engines on one location-scale sample, single worker.

    Panels: ``single`` fits tau = 0.5 with the full solver and with
    subsample preprocessing; ``process`` fits the grid (default 99
    percentiles) with per-tau full solves, chained preprocessing and the
    one-step march; ``bootstrap`` runs B replicates at tau = 0.5 naively
    (full solve per resample), with preprocessing and with score
    multipliers. Bootstrap times exclude the sample fit both methods start
    from; the score time includes its Jacobian estimate. ``engines``
    restricts the engines timed per panel.
    """
    from . import bootstrap as bs
    from .onestep import fit_process_onestep, with_jacobians
    from .preprocess import fit_single_pk
    from .solver import solve_qr

    if repetitions < 1:
        raise DomainError("repetitions must be >= 1")
    bad = set(panels) - set(BENCH_PANELS)
    if bad:
        raise DomainError(f"unknown panels {sorted(bad)}")
    taus = np.round(np.arange(1, 100) / 100.0, 2) if grid is None else np.asarray(grid, dtype=float)
    ds = LocationScaleDesign(k=k).sample(n, replicate_rng(seed, 0, MC_DATA))
    engines = engines or {}

    def naive_bootstrap():
        for r in range(B):
            solve_qr(ds.subset(bs.resample_indices(ds.n, seed, r)), 0.5)

    median_proc = None

    def sample_fit():
        nonlocal median_proc
        if median_proc is None:
            median_proc = fit_process_preprocess(ds, [0.5])
        return median_proc

    def score_bootstrap():
        bs.score_multiplier_bootstrap(ds, with_jacobians(ds, sample_fit()), B, base_seed=seed, workers=1)

    plan = {
        "single": {"full": lambda: solve_qr(ds, 0.5), "preprocess": lambda: fit_single_pk(ds, 0.5)},
        "process": {"full": lambda: [solve_qr(ds, t) for t in taus],
                    "preprocess": lambda: fit_process_preprocess(ds, taus),
                    "onestep": lambda: fit_process_onestep(ds, taus)},
        "bootstrap": {"full": naive_bootstrap,
                      "preprocess": lambda: bs.bootstrap_qr_preprocessed(ds, sample_fit(), B, base_seed=seed,
                                                                         workers=1),
                      "score": score_bootstrap},
    }
    report = BenchReport(n, k, int(taus.size), B, repetitions, seed)
    for panel in panels:
        chosen = engines.get(panel, tuple(plan[panel]))
        unknown = set(chosen) - set(plan[panel])
        if unknown:
            raise DomainError(f"unknown engines {sorted(unknown)} for panel {panel!r}")
        times = {name: _median_time(plan[panel][name], repetitions) for name in chosen}
        report.times[panel] = times
        if "full" in times:
            report.ratios[panel] = {name: times["full"] / t for name, t in times.items()}
    return report
