from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import make_dataset, same_solution, tie_aware_moment_bound
from qrproc import _kernels
from qrproc.core import Dataset, Engine, parse_grid
from qrproc.errors import DomainError
from qrproc.preprocess import (PreprocessConfig, fit_process_preprocess, fit_single_pk, partition, residual_scale,
                               size_base, solve_preprocessed, subsample_size)
from qrproc.solver import solve_qr


@st.composite
def instances(draw, min_n=150, max_n=1500, max_k=8):
    n = draw(st.integers(min_n, max_n))
    k = draw(st.integers(2, max_k))
    kind = draw(st.sampled_from(("gaussian", "mixed", "discrete")))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    try:
        return make_dataset(rng, n, k, kind)
    except Exception:
        return make_dataset(rng, n, k, "gaussian")


# ---------------------------------------------------------------- residual scale

def test_residual_scale_intercept_only():
    ds = Dataset(np.random.default_rng(0).normal(size=40), np.ones((40, 1)))
    np.testing.assert_allclose(residual_scale(ds), 1.0, rtol=1e-14)


def test_residual_scale_duplicated_rows(rng):
    ds = make_dataset(rng, 50, 3)
    X = np.vstack([ds.X, ds.X[7]])
    z = residual_scale(Dataset(np.append(ds.y, 0.0), X))
    assert z[7] == z[-1]


@given(instances(min_n=20, max_n=300))
def test_residual_scale_matches_direct_formula(ds):
    z = residual_scale(ds)
    G = np.linalg.inv(ds.X.T @ ds.X / ds.n)
    direct = np.sqrt(np.einsum("ij,jk,ik->i", ds.X, G, ds.X))
    np.testing.assert_allclose(z, direct, rtol=1e-10)
    assert np.all(z > 0)


# ---------------------------------------------------------------- partition

def test_partition_full_window():
    r = np.random.default_rng(1).normal(size=100)
    p = partition(r, np.ones(100), 0.4, 100)
    assert p.low.size == 0 and p.high.size == 0 and p.kept.size == 100


def test_partition_symmetric_half_window():
    r = np.random.default_rng(2).normal(size=1000)
    p = partition(r, np.ones(1000), 0.5, 500)
    # direct count: the window of M order statistics starting at the type-1 (tau - M/2n) quantile
    s = np.sort(r)
    first = int(np.ceil(0.25 * 1000)) - 1
    lo, hi = s[first], s[first + 500 - 1]
    assert p.low.size == np.sum(r < lo) and p.high.size == np.sum(r > hi)
    assert abs(p.low.size - 250) <= 1 and abs(p.high.size - 250) <= 1


def test_partition_all_equal_residuals():
    p = partition(np.zeros(30), np.ones(30), 0.5, 10)
    got = np.sort(np.concatenate([p.low, p.high, p.kept]))
    np.testing.assert_array_equal(got, np.arange(30))


@given(st.integers(10, 400), st.floats(0.05, 0.95), st.floats(0.01, 1.0), st.integers(0, 2**32 - 1),
       st.booleans())
def test_partition_is_a_partition(n, tau, frac, seed, ties):
    rng = np.random.default_rng(seed)
    r = rng.integers(-3, 4, n).astype(float) if ties else rng.normal(size=n)
    z = rng.uniform(0.5, 2.0, n)
    M = max(1, int(frac * n))
    p = partition(r, z, tau, M)
    allrows = np.concatenate([p.low, p.high, p.kept])
    assert allrows.size == n and np.unique(allrows).size == n
    ratio = r / z
    if p.low.size and p.kept.size:
        assert ratio[p.low].max() <= ratio[p.kept].min()
    if p.high.size and p.kept.size:
        assert ratio[p.high].min() >= ratio[p.kept].max()
    if not ties:
        assert abs(p.kept.size - M) <= 2


def test_partition_domain_error():
    with pytest.raises(DomainError):
        partition(np.zeros(5), np.ones(5), 0.5, 0)


# ---------------------------------------------------------------- sizes

def test_subsample_size_formula():
    assert subsample_size(5000, 8) == 1170
    assert round(3 * size_base(5000, 8, "one_half")) == 600


def test_config_validation():
    with pytest.raises(DomainError):
        PreprocessConfig(m=0.0)
    with pytest.raises(DomainError):
        PreprocessConfig(max_rounds=0)
    with pytest.raises(DomainError):
        PreprocessConfig(allowed_bad_signs=-1)


# ---------------------------------------------------------------- solve_preprocessed

def test_exact_prelim_needs_no_fixups(rng):
    ds = make_dataset(rng, 3000, 5)
    full = solve_qr(ds, 0.35)
    fit = solve_preprocessed(ds, 0.35, full.beta)
    assert fit.fixups == 0
    assert same_solution(ds, 0.35, fit.beta, full.beta)


def test_garbage_prelim_still_exact(rng):
    ds = make_dataset(rng, 500, 3)
    ds = Dataset(ds.y + 25.0, ds.X)
    full = solve_qr(ds, 0.6)
    fit = solve_preprocessed(ds, 0.6, np.zeros(3))
    assert same_solution(ds, 0.6, fit.beta, full.beta)


def test_neighbouring_prelim_n5000_k8(rng):
    ds = make_dataset(rng, 5000, 8)
    prev = solve_qr(ds, 0.29)
    fit = solve_preprocessed(ds, 0.3, prev.beta)
    assert same_solution(ds, 0.3, fit.beta, solve_qr(ds, 0.3).beta)
    assert abs(fit.info["kept"] - 600) <= 0.1 * 600 + fit.fixups


@given(instances(), st.floats(0.05, 0.95), st.floats(-0.3, 0.3))
def test_solve_preprocessed_is_exact(ds, tau, shift):
    full = solve_qr(ds, tau)
    prelim = full.beta + shift
    fit = solve_preprocessed(ds, tau, prelim)
    assert same_solution(ds, tau, fit.beta, full.beta)
    assert fit.moment_inf_norm <= tie_aware_moment_bound(ds, fit.beta) * (1 + 1e-12)


def test_sign_check_invariant_after_acceptance(rng):
    """With a glob budget, at most allowed_bad_signs globbed rows sit on the wrong side."""
    ds = make_dataset(rng, 4000, 4)
    prev = solve_qr(ds, 0.45).beta
    for allowed in (0, 3):
        cfg = PreprocessConfig(allowed_bad_signs=allowed)
        m, base = cfg.multiplier(3.0), size_base(ds.n, ds.k, "one_half")
        out = _kernels.preprocess_solve(ds.At, ds.y, residual_scale(ds), 0.5, prev, m, base, allowed, 10, 0,
                                        1e-8, 50, 0.99995)
        beta = out[0]
        assert out[1] == _kernels.OK
        r0 = ds.y - ds.X @ prev
        p = partition(r0, residual_scale(ds), 0.5, int(round(m * base)))
        if out[3] == 0:  # accepted on the first partition: count its wrong-signed globbed rows
            r = ds.y - ds.X @ beta
            bad = np.sum(r[p.low] >= 0) + np.sum(r[p.high] <= 0)
            assert bad <= allowed


def test_round_budget_exhaustion_falls_back_to_full(rng):
    ds = make_dataset(rng, 2000, 3)
    fit = solve_preprocessed(ds, 0.5, np.array([50.0, -40.0, 30.0]), PreprocessConfig(max_rounds=1, m=0.05))
    assert same_solution(ds, 0.5, fit.beta, solve_qr(ds, 0.5).beta)


def test_restart_count_bounded(rng):
    ds = make_dataset(rng, 3000, 3)
    cfg = PreprocessConfig(max_rounds=3)
    fit = solve_preprocessed(ds, 0.5, np.array([10.0, 10.0, -10.0]), cfg)
    assert fit.info["restarts"] <= cfg.max_rounds
    assert same_solution(ds, 0.5, fit.beta, solve_qr(ds, 0.5).beta)


# ---------------------------------------------------------------- Algorithm 1

def test_single_pk_falls_through_for_small_n(rng):
    tiny = make_dataset(rng, 12, 6)  # subsample size round(72^{2/3}) = 17 >= n
    assert tiny.n <= subsample_size(tiny.n, tiny.k)
    fit = fit_single_pk(tiny, 0.5)
    assert fit.engine is Engine.BASELINE
    np.testing.assert_array_equal(fit.beta, solve_qr(tiny, 0.5).beta)


@pytest.mark.parametrize("seed", range(50))
def test_single_pk_equals_full(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(500, 6000))
    k = int(rng.integers(2, 10))
    tau = float(rng.uniform(0.05, 0.95))
    ds = make_dataset(rng, n, k, ("gaussian", "mixed")[seed % 2])
    fit = fit_single_pk(ds, tau, PreprocessConfig(seed=seed))
    assert same_solution(ds, tau, fit.beta, solve_qr(ds, tau).beta)


# ---------------------------------------------------------------- Algorithm 2

def test_process_single_point_matches_pk(rng):
    ds = make_dataset(rng, 3000, 4)
    proc = fit_process_preprocess(ds, [0.3])
    np.testing.assert_array_equal(proc.fits[0].beta, fit_single_pk(ds, 0.3).beta)


def test_process_n5000_k8_full_grid(rng):
    ds = make_dataset(rng, 5000, 8, "mixed")
    grid = parse_grid("0.01:0.99:0.01")
    proc = fit_process_preprocess(ds, grid)
    assert len(proc.fits) == 99
    for fit in proc.fits:
        assert same_solution(ds, fit.tau, fit.beta, solve_qr(ds, fit.tau).beta), fit.tau


def test_process_kept_size_scaling(rng):
    ds = make_dataset(rng, 4000, 5)
    proc = fit_process_preprocess(ds, parse_grid("0.2:0.8:0.05"))
    expected = min(ds.n, round(3 * size_base(ds.n, ds.k, "one_half")))
    for fit in proc.fits[1:]:
        if fit.fixups == 0:
            assert abs(fit.info["kept"] - expected) <= 2


@given(instances(min_n=200, max_n=2500), st.integers(0, 2**32 - 1))
def test_process_is_exact(ds, seed):
    rng = np.random.default_rng(seed)
    taus = np.sort(rng.choice(np.arange(0.05, 0.96, 0.05), size=int(rng.integers(1, 6)), replace=False))
    proc = fit_process_preprocess(ds, np.round(taus, 2))
    for fit in proc.fits:
        assert same_solution(ds, fit.tau, fit.beta, solve_qr(ds, fit.tau).beta)


def test_process_records_tail_warnings(rng):
    ds = make_dataset(rng, 300, 4)
    proc = fit_process_preprocess(ds, [0.1, 0.5])
    assert len(proc.info["warnings"]) == 1
