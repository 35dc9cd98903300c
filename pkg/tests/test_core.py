from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from qrproc.core import (CoefProcess, Dataset, Engine, QrFit, QuantileGrid, at_or_below_fit, check_loss,
                         interpolate_process, load_csv, make_fit, moment, moment_bound, objective, parse_grid,
                         validate_grid)
from qrproc.errors import DomainError, GridError, ParseError, RangeError, RankError, ShapeError

taus = st.floats(0.001, 0.999)
reals = st.floats(-1e6, 1e6, allow_nan=False)


# ---------------------------------------------------------------- check loss

@pytest.mark.parametrize("tau,u,expected", [(0.5, 2.0, 1.0), (0.25, -4.0, 3.0), (0.9, 0.0, 0.0)])
def test_check_loss_examples(tau, u, expected):
    assert check_loss(tau, u) == expected


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_check_loss_rejects_tau_outside_unit_interval(tau):
    with pytest.raises(DomainError):
        check_loss(tau, 1.0)


def test_check_loss_vectorised():
    np.testing.assert_array_equal(check_loss(0.25, np.array([-4.0, 0.0, 4.0])), [3.0, 0.0, 1.0])


@given(taus, reals)
def test_check_loss_nonnegative(tau, u):
    assert check_loss(tau, u) >= 0.0


@given(taus)
def test_check_loss_zero_at_zero(tau):
    assert check_loss(tau, 0.0) == 0.0


@given(taus, reals, reals, st.floats(0.0, 1.0))
def test_check_loss_convex(tau, u1, u2, lam):
    mix = check_loss(tau, lam * u1 + (1 - lam) * u2)
    bound = lam * check_loss(tau, u1) + (1 - lam) * check_loss(tau, u2)
    assert mix <= bound + 1e-9 * (1.0 + abs(u1) + abs(u2))


# ---------------------------------------------------------------- objective / moment

def test_objective_examples(median3):
    assert objective(median3, 0.5, [2.0]) == pytest.approx(1.0)
    assert objective(median3, 0.25, [1.0]) == pytest.approx(0.75)


def test_objective_zero_at_interpolating_beta():
    X = np.column_stack([np.ones(4), [0.0, 1.0, 2.0, 3.0]])
    ds = Dataset(X @ np.array([1.5, -2.0]), X)
    assert objective(ds, 0.3, [1.5, -2.0]) == 0.0


def test_objective_shape_error(median3):
    with pytest.raises(ShapeError):
        objective(median3, 0.5, [1.0, 2.0])


def test_moment_examples(median3):
    np.testing.assert_allclose(moment(median3, 0.5, [2.0]), [-1.0 / 6.0])
    np.testing.assert_allclose(moment(median3, 0.5, [0.0]), [0.5])


def test_moment_shape_error(median3):
    with pytest.raises(ShapeError):
        moment(median3, 0.5, np.zeros(3))


@st.composite
def small_datasets(draw, max_n=30, max_k=4):
    n = draw(st.integers(5, max_n))
    k = draw(st.integers(1, min(max_k, n - 1)))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, k - 1))])
    y = X @ rng.normal(size=k) + rng.standard_normal(n)
    return Dataset(y, X)


@given(small_datasets(), taus, st.integers(0, 2**32 - 1))
def test_objective_permutation_invariant(ds, tau, seed):
    rng = np.random.default_rng(seed)
    beta = rng.normal(size=ds.k)
    perm = rng.permutation(ds.n)
    shuffled = Dataset(ds.y[perm], ds.X[perm])
    assert objective(shuffled, tau, beta) == pytest.approx(objective(ds, tau, beta), rel=1e-12, abs=1e-12)


@given(small_datasets(), taus, st.integers(0, 2**32 - 1))
def test_moment_is_minus_gradient_of_objective(ds, tau, seed):
    """Away from zero residuals the objective is linear in beta with gradient -n * moment."""
    rng = np.random.default_rng(seed)
    beta = rng.normal(size=ds.k)
    r = ds.y - ds.X @ beta
    assume(np.abs(r).min() > 1e-3)
    # the largest step that cannot flip a residual sign keeps the objective exactly linear
    h = 0.5 * np.abs(r).min() / np.abs(ds.X).max()
    grad = np.array([(objective(ds, tau, beta + h * e) - objective(ds, tau, beta - h * e)) / (2 * h)
                     for e in np.eye(ds.k)])
    expected = -ds.n * moment(ds, tau, beta)
    np.testing.assert_allclose(grad, expected, rtol=1e-8, atol=1e-8 * ds.n * np.abs(ds.X).max())


def test_at_or_below_fit_absorbs_rounding():
    X = np.column_stack([np.ones(3), [0.1, 0.2, 0.3]])
    beta = np.array([0.3, 0.7])
    y = X @ beta
    below = at_or_below_fit(Dataset(y, X), beta)
    assert below.all()
    below2 = at_or_below_fit(Dataset(y + 1e-3, X), beta)
    assert not below2.any()


def test_make_fit_stats(median3):
    fit = make_fit(median3, 0.5, np.array([2.0]), Engine.BASELINE)
    assert fit.objective == pytest.approx(1.0)
    assert fit.moment_inf_norm == pytest.approx(1.0 / 6.0)


def test_moment_bound_formula():
    X = np.column_stack([np.ones(10), np.linspace(-4, 2, 10)])
    ds = Dataset(np.arange(10.0), X)
    assert moment_bound(ds) == pytest.approx(2 * 4.0 / 10)


# ---------------------------------------------------------------- dataset / grid

def test_dataset_requires_full_rank():
    X = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(RankError):
        Dataset(np.arange(5.0), X)


def test_dataset_rejects_nonfinite():
    with pytest.raises(DomainError):
        Dataset(np.array([1.0, np.nan, 2.0]), np.ones((3, 1)))


def test_dataset_shape_mismatch():
    with pytest.raises(ShapeError):
        Dataset(np.arange(3.0), np.ones((4, 1)))


def test_dataset_is_immutable(median3):
    with pytest.raises(ValueError):
        median3.y[0] = 5.0


def test_validate_grid_examples():
    _, warns = validate_grid([0.05], 1000, 10)
    assert len(warns) == 1
    _, warns = validate_grid([0.01], 50000, 20)
    assert warns == []
    with pytest.raises(GridError):
        validate_grid([0.3, 0.2], 100, 2)


def test_validate_grid_warns_on_both_tails():
    grid, warns = validate_grid([0.05, 0.5, 0.95], 1000, 10)
    assert len(grid) == 3 and len(warns) == 2


@pytest.mark.parametrize("bad", [[], [0.0, 0.5], [0.5, 1.0], [0.2, 0.2]])
def test_grid_validation_errors(bad):
    with pytest.raises(GridError):
        QuantileGrid(np.array(bad))


def test_grid_mesh():
    assert QuantileGrid(np.array([0.1, 0.2, 0.5])).mesh == pytest.approx(0.3)


def test_parse_grid_inclusive_with_snapping():
    g = parse_grid("0.1:0.9:0.1")
    assert g.size == 9 and g[0] == 0.1 and g[-1] == 0.9
    g = parse_grid("0.05:0.95:0.01")
    assert g.size == 91 and g[-1] == 0.95
    np.testing.assert_array_equal(parse_grid("0.25, 0.5,0.75"), [0.25, 0.5, 0.75])


@pytest.mark.parametrize("spec", ["0.1:0.9", "0.9:0.1:0.1", "0.1:0.9:0", "a,b"])
def test_parse_grid_errors(spec):
    with pytest.raises(GridError):
        parse_grid(spec)


# ---------------------------------------------------------------- interpolation

def _process(taus, betas):
    ds_fits = [QrFit(t, np.asarray(b, dtype=float), 0.0, 0.0, Engine.BASELINE) for t, b in zip(taus, betas)]
    return CoefProcess(QuantileGrid(np.asarray(taus)), ds_fits)


def test_interpolate_process_examples():
    proc = _process([0.2, 0.4, 0.6], [[0.0, 1.0], [1.0, 3.0], [4.0, 3.0]])
    np.testing.assert_array_equal(interpolate_process(proc, 0.4), [1.0, 3.0])
    np.testing.assert_allclose(interpolate_process(proc, 0.3), [0.5, 2.0])
    np.testing.assert_allclose(interpolate_process(proc, 0.55), [3.25, 3.0])
    with pytest.raises(RangeError):
        interpolate_process(proc, 0.1)
    with pytest.raises(RangeError):
        interpolate_process(proc, 0.61)


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=12, unique=True), st.integers(0, 2**32 - 1))
def test_interpolation_exact_at_knots(raw, seed):
    t = np.unique(np.round(raw, 6))
    betas = np.random.default_rng(seed).normal(size=(t.size, 3))
    proc = _process(t, betas)
    for j, tau in enumerate(t):
        np.testing.assert_array_equal(interpolate_process(proc, tau), betas[j])


def test_coef_process_alignment():
    with pytest.raises(ShapeError):
        CoefProcess(QuantileGrid(np.array([0.2, 0.4])), [QrFit(0.2, np.zeros(1), 0, 0, Engine.BASELINE)])


# ---------------------------------------------------------------- CSV

def test_load_csv_with_intercept(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("y,a,b\n1,0,1\n2,1,0\n4,1,1\n5,3,1\n")
    ds = load_csv(p, "y")
    assert (ds.n, ds.k) == (4, 3)
    assert ds.column_names == ("intercept", "a", "b")
    np.testing.assert_array_equal(ds.X[:, 0], 1.0)


def test_load_csv_three_rows_two_columns(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("y,a,b\n1,0,1\n2,1,0\n4,1,1\n")
    ds = load_csv(p, "y")
    assert (ds.n, ds.k) == (3, 3)


def test_load_csv_response_column_anywhere(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,y\n0,1\n1,3\n2,2\n")
    ds = load_csv(p, "y", intercept=False)
    np.testing.assert_array_equal(ds.y, [1, 3, 2])
    assert ds.column_names == ("a",)


def test_load_csv_duplicated_column_is_rank_error(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("y,a,b\n1,0,0\n2,1,1\n4,2,2\n5,3,3\n")
    with pytest.raises(RankError):
        load_csv(p, "y")


def test_load_csv_parse_error_names_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("y,a\n1,0\n2,NA\n3,1\n")
    with pytest.raises(ParseError) as err:
        load_csv(p, "y")
    assert err.value.row == 2
    assert "row 2" in str(err.value) and "NA" in str(err.value)


def test_load_csv_missing_response(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,0\n")
    with pytest.raises(ParseError):
        load_csv(p, "y")


def test_load_csv_ragged_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("y,a\n1,0\n2\n")
    with pytest.raises(ParseError) as err:
        load_csv(p, "y")
    assert err.value.row == 2
