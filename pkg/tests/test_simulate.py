from __future__ import annotations

import json

import numpy as np
import pytest
from scipy.stats import norm

from qrproc.core import parse_grid
from qrproc.errors import DomainError
from qrproc.preprocess import fit_process_preprocess
from qrproc.simulate import (BenchReport, FunctionalStudy, HeteroskedasticDesign, LocationScaleDesign, McReport,
                             PointwiseStudy, accuracy_measures, bench_engines, local_alternative, mc_functional,
                             mc_pointwise, mc_relative_accuracy, mc_size_power, rate_se, true_process)
from qrproc.simulate import _onestep_grid


# ---------------------------------------------------------------- heteroskedastic design

@pytest.fixture(scope="module")
def big_het():
    return HeteroskedasticDesign().sample(1_000_000, np.random.default_rng(0))


def test_het_truth_at_median():
    b = HeteroskedasticDesign().beta(0.5)
    assert b[2] == 0.0 and b[0] == 0.0 and b[1] == 1.0


def test_het_regressor_and_noise_moments(big_het):
    x = big_het.X[:, 1]
    assert abs(x.var() - 1.0) < 0.01
    u = (big_het.y - x) / (0.1 + x * x)
    assert abs(u.var() - 1.0 / 3.0) < 0.005


@pytest.mark.parametrize("tau", [0.1, 0.25, 0.5, 0.9])
def test_het_conditional_quantile(big_het, tau):
    """P(y <= x'beta(tau)) = tau overall and within bins of x."""
    fit = big_het.X @ HeteroskedasticDesign().beta(tau)
    below = big_het.y <= fit
    se = np.sqrt(tau * (1 - tau) / big_het.n)
    assert abs(below.mean() - tau) < 4 * se
    x = big_het.X[:, 1]
    for lo, hi in ((-5, -1), (-1, 0), (0, 1), (1, 5)):
        sel = (x >= lo) & (x < hi)
        assert abs(below[sel].mean() - tau) < 4 * np.sqrt(tau * (1 - tau) / sel.sum())


def test_het_jacobian_against_simulation(big_het):
    """Quadrature Jacobian against the sample mean of the conditional density times xx'."""
    tau = 0.3
    x = big_het.X[:, 1]
    dens = norm.pdf(norm.ppf(tau)) / ((1 / np.sqrt(3)) * (0.1 + x * x))
    mc = (big_het.X * dens[:, None]).T @ big_het.X / big_het.n
    J = HeteroskedasticDesign().jacobian(tau)
    # the density weight is heavy-tailed near x = 0, so compare the well-behaved entries tightly
    assert J[2, 2] == pytest.approx(mc[2, 2], rel=0.02)
    assert J[1, 1] == pytest.approx(mc[1, 1], rel=0.02)
    assert J[0, 0] == pytest.approx(mc[0, 0], rel=0.05)


def test_het_asymptotic_covariance_against_replications():
    d = HeteroskedasticDesign()
    n, R, tau = 4000, 300, 0.5
    rng = np.random.default_rng(5)
    est = np.array([fit_process_preprocess(d.sample(n, rng), [tau]).betas[0] for _ in range(R)])
    sd_mc = est.std(axis=0, ddof=1)
    sd_theory = np.sqrt(np.diag(d.asymptotic_covariance(tau)) / n)
    # a standard deviation estimated from R draws has relative se ~ 1/sqrt(2R) = 4%
    np.testing.assert_allclose(sd_mc, sd_theory, rtol=0.2)


def test_local_alternative_formula():
    d = HeteroskedasticDesign()
    sd = np.sqrt(d.asymptotic_covariance(0.5)[2, 2])
    assert local_alternative(d, 0.5, 2) == pytest.approx(norm.ppf(0.975) * sd / 10.0, rel=1e-12)


# ---------------------------------------------------------------- location-scale design

def test_location_scale_constant_scale_gives_constant_slopes():
    d = LocationScaleDesign(k=6, scale_slope=0.0)
    B = true_process(d, [0.1, 0.5, 0.9])
    np.testing.assert_array_equal(B[:, 1:], np.broadcast_to(B[1, 1:], (3, 5)))
    assert B[0, 0] < B[1, 0] < B[2, 0]


@pytest.mark.parametrize("tau", [0.2, 0.5, 0.8])
def test_location_scale_conditional_quantile(tau):
    d = LocationScaleDesign(k=8, rare_prob=0.05)
    ds = d.sample(400_000, np.random.default_rng(1))
    below = ds.y <= ds.X @ d.beta(tau)
    assert abs(below.mean() - tau) < 4 * np.sqrt(tau * (1 - tau) / ds.n)
    # also within the rare-indicator group
    sel = ds.X[:, -1] == 1 if d._layout()[0][-1] else ds.X[:, -2] == 1
    assert abs(below[sel].mean() - tau) < 4 * np.sqrt(tau * (1 - tau) / sel.sum())


def test_location_scale_rank_audit():
    d = LocationScaleDesign()
    for seed in range(100):
        ds = d.sample(10_000, np.random.default_rng(seed))
        assert np.linalg.matrix_rank(ds.X) == d.k, seed


def test_location_scale_indicator_layout():
    is_ind, probs = LocationScaleDesign(k=20, rare_prob=0.007)._layout()
    assert is_ind.sum() == 9
    assert probs[is_ind][0] == pytest.approx(0.5) and probs[is_ind][-1] == pytest.approx(0.007)


def test_location_scale_consistency_at_median():
    d = LocationScaleDesign(k=6, rare_prob=0.05)
    n, tau = 100_000, 0.5
    ds = d.sample(n, np.random.default_rng(7))
    est = fit_process_preprocess(ds, [tau]).betas[0]
    J = d.jacobian(tau, draws=200_000)
    Q = ds.X.T @ ds.X / n
    Ji = np.linalg.inv(J)
    se = np.sqrt(np.diag(tau * (1 - tau) * Ji @ Q @ Ji) / n)
    assert np.all(np.abs(est - d.beta(tau)) < 3.5 * se)


def test_location_scale_validation():
    with pytest.raises(DomainError):
        LocationScaleDesign(k=1)
    with pytest.raises(DomainError):
        LocationScaleDesign(rare_prob=0.0)
    with pytest.raises(DomainError):
        LocationScaleDesign(scale_slope=-1.0)


# ---------------------------------------------------------------- harnesses

def test_accuracy_measures_example():
    est = np.array([[1.0], [2.0], [4.0]])
    m = accuracy_measures(est, np.array([2.0]))
    assert m["bias2"][0] == pytest.approx((1 / 3) ** 2)
    assert m["variance"][0] == pytest.approx(np.var([1, 2, 4]))
    assert m["mse"][0] == pytest.approx(5 / 3)
    assert m["median_bias"][0] == 0.0 and m["mad"][0] == 1.0 and m["mae"][0] == 1.0


def test_rate_se():
    assert rate_se(0.05, 1000) == pytest.approx(np.sqrt(0.05 * 0.95 / 1000))


def test_self_comparison_is_exactly_one():
    rep = mc_relative_accuracy(HeteroskedasticDesign(), 500, parse_grid("0.2:0.8:0.1"), 4, 3, reference="onestep")
    assert rep.metrics["relative_mae"] == 1.0 and rep.metrics["relative_mse"] == 1.0
    assert rep.curves["relative_mae"] == [1.0] * 7


def test_relative_accuracy_deterministic_and_worker_invariant():
    args = (HeteroskedasticDesign(), 400, parse_grid("0.3:0.7:0.1"), 4, 11)
    a = mc_relative_accuracy(*args, workers=1)
    b = mc_relative_accuracy(*args, workers=2)
    assert a.metrics == b.metrics and a.curves == b.curves


def test_mc_report_json_round_trip():
    rep = McReport({"name": "x"}, 10, 2, 0, {"a": np.float64(1.5), "v": np.arange(2)})
    d = json.loads(rep.to_json())
    assert d["metrics"] == {"a": 1.5, "v": [0, 1]} and d["n"] == 10


def test_onestep_grid():
    np.testing.assert_allclose(_onestep_grid(0.55, 0.01), np.round(np.arange(0.50, 0.5501, 0.01), 12))
    np.testing.assert_allclose(_onestep_grid(0.4, 0.05), [0.4, 0.45, 0.5])
    np.testing.assert_array_equal(_onestep_grid(0.5, 0.01), [0.5])


def test_mc_pointwise_smoke():
    study = PointwiseStudy(tau=0.5, methods=("kernel", "score", "empirical_onestep", "score_onestep"),
                           B_empirical=20, B_score=40, step=0.05)
    rep = mc_pointwise(HeteroskedasticDesign(), 300, study, 3, seed=1)
    for m in study.methods:
        assert 0 <= rep.metrics[f"{m}_size"]["rate"] <= 1
        assert rep.metrics[f"{m}_size"]["trials"] <= 3
    again = mc_size_power(HeteroskedasticDesign(), 300, study, 3, seed=1)
    assert again.metrics == rep.metrics


def test_mc_functional_smoke():
    study = FunctionalStudy(grid=(0.3, 0.4, 0.5, 0.6, 0.7), methods=("multiplier", "empirical_onestep"), B=20)
    rep = mc_functional(HeteroskedasticDesign(), 400, study, 2, seed=2)
    assert set(rep.metrics) == {f"{m}_{k}_{h}" for m in study.methods for k in ("KS", "CvM")
                                for h in ("size", "power")}


def test_study_validation():
    with pytest.raises(DomainError):
        PointwiseStudy(methods=("bogus",))
    with pytest.raises(DomainError):
        FunctionalStudy(kinds=("AD",))
    with pytest.raises(DomainError):
        mc_size_power(HeteroskedasticDesign(), 100, object(), 1)


def test_bench_smoke():
    rep = bench_engines(400, 3, grid=[0.25, 0.5, 0.75], B=3, repetitions=1)
    assert isinstance(rep, BenchReport)
    assert set(rep.times) == {"single", "process", "bootstrap"}
    assert rep.ratios["process"]["full"] == 1.0
    assert set(rep.times["bootstrap"]) == {"full", "preprocess", "score"}
    md = rep.to_markdown()
    assert md.count("\n| ") == 1 + 8 and "speed-up" in md  # header plus 2 + 3 + 3 rows
    json.loads(rep.to_json())
    with pytest.raises(DomainError):
        bench_engines(100, 2, panels=("nope",))
