from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthinfer.estimators import (OLS, EstimationError, EstimateResult, Mean, Proportion, check_estimand,
                                   estimate, estimate_mean, estimate_ols, estimate_proportion, ols_fit,
                                   parse_estimand)
from synthinfer.randkit import RngStream
from synthinfer.simlab.generators import gen_sim1, gen_sim2, gen_sim3
from synthinfer.tabular import Binary, Categorical, Column, Continuous, Dataset, Schema


def cont_ds(*cols, lo=-1e6, hi=1e6):
    names = [f"x{i}" for i in range(len(cols))]
    schema = Schema(tuple(Column(n, Continuous(lo, hi)) for n in names))
    return Dataset(schema, np.column_stack(cols))


def test_mean_small():
    r = estimate_mean(cont_ds(np.array([1.0, 2.0, 3.0])), "x0")
    assert r.q == 2.0 and abs(r.u - 1 / 3) < 1e-15 and r.n_used == 3


def test_mean_constant_column():
    r = estimate_mean(cont_ds(np.full(10, 4.5)), "x0")
    assert r.q == 4.5 and r.u == 0.0


def test_mean_needs_two_rows():
    with pytest.raises(EstimationError):
        estimate_mean(cont_ds(np.array([1.0])), "x0")


def test_mean_on_simulated_data():
    ds, _ = gen_sim1(RngStream(1), 10_000)
    assert abs(estimate_mean(ds, "y1").q) < 4 / 100


def test_proportion_examples():
    schema = Schema((Column("b", Binary()),))
    r = estimate_proportion(Dataset(schema, [[1], [1], [0], [0]]), "b", "1")
    assert r.q == 0.5 and r.u == 0.0625
    r = estimate_proportion(Dataset(schema, [[1]] * 7), "b", 1)
    assert r.q == 1.0 and r.u == 0.0


def test_proportion_categorical_and_errors():
    schema = Schema((Column("c", Categorical(("a", "b", "c"))), Column("x", Continuous(0, 1))))
    ds = Dataset(schema, [[0, 0.1], [2, 0.2], [2, 0.3], [1, 0.4]])
    assert estimate_proportion(ds, "c", "c").q == 0.5
    with pytest.raises(EstimationError, match="not in levels"):
        estimate_proportion(ds, "c", "z")
    with pytest.raises(EstimationError):
        estimate_proportion(ds, "x", "1")
    with pytest.raises(EstimationError):
        estimate_mean(ds, "c")


def test_proportion_on_binary_simulation():
    ds, _ = gen_sim3(RngStream(2), 10_000)
    assert abs(estimate_proportion(ds, "y1", "1").q - 0.6) < 0.02


def test_ols_exact_line():
    x = np.linspace(-3, 3, 25)
    ds = cont_ds(3 + 2 * x, x)
    b0 = estimate_ols(ds, "x0", ["x1"], 0)
    b1 = estimate_ols(ds, "x0", ["x1"], 1)
    assert abs(b0.q - 3) < 1e-10 and abs(b1.q - 2) < 1e-10
    assert b0.u < 1e-10 and b1.u < 1e-10


def test_ols_against_lstsq_oracle():
    g = RngStream(4).gen
    X = g.standard_normal((200, 3))
    y = 1 + X @ [0.5, -2.0, 0.1] + g.standard_normal(200)
    ds = cont_ds(y, *X.T)
    A = np.column_stack([np.ones(200), X])
    beta, rss, *_ = np.linalg.lstsq(A, y, rcond=None)
    cov = rss[0] / (200 - 4) * np.linalg.inv(A.T @ A)
    for k in range(4):
        r = estimate_ols(ds, "x0", ["x1", "x2", "x3"], k)
        assert abs(r.q - beta[k]) < 1e-10
        assert abs(r.u - cov[k, k]) < 1e-12


def test_ols_rank_deficient_and_small():
    x = np.arange(10.0)
    with pytest.raises(EstimationError, match="rank"):
        estimate_ols(cont_ds(x + 1, x, 2 * x), "x0", ["x1", "x2"], 1)
    with pytest.raises(EstimationError):
        estimate_ols(cont_ds(x[:2], x[:2] ** 2), "x0", ["x1"], 1)


def test_ols_sim2_slope():
    ds, _ = gen_sim2(RngStream(5), 50_000)
    r = estimate_ols(ds, "y1", ["y2", "y3"], 2)
    assert abs(r.q - 3) < 3 * np.sqrt(r.u)


def test_ols_sim2_noiseless_exact():
    ds, _ = gen_sim2(RngStream(6), 2_000, noise=False)
    for k, want in enumerate((1.0, 1.0, 3.0)):
        # clamping of y1 to its range is possible in principle; check none happened
        assert ds.clamped.get("y1", 0) == 0
        assert abs(estimate_ols(ds, "y1", ["y2", "y3"], k).q - want) < 1e-8


def test_ols_sim1_slopes():
    ds, _ = gen_sim1(RngStream(7), 200_000)
    s2 = estimate_ols(ds, "y1", ["y2", "y3"], 1)
    s3 = estimate_ols(ds, "y1", ["y2", "y3"], 2)
    # normal-equations oracle: [[1, .25], [.25, 1]]^-1 (.8, .6)
    want = np.linalg.solve([[1, 0.25], [0.25, 1]], [0.8, 0.6])
    assert abs(s2.q - want[0]) < 4 * np.sqrt(s2.u)
    assert abs(s3.q - want[1]) < 4 * np.sqrt(s3.u)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=40))
def test_mean_variance_equals_intercept_only_ols(values):
    x = np.array(values)
    m = estimate_mean(cont_ds(x), "x0")
    _, cov = ols_fit(np.ones((x.size, 1)), x)
    assert abs(m.u - cov[0, 0]) <= 1e-10 * max(1.0, m.u)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_ols_residuals_orthogonal_and_order_invariant(seed):
    g = np.random.default_rng(seed)
    X = g.standard_normal((60, 2))
    y = X @ [1.0, -1.0] + g.standard_normal(60)
    A = np.column_stack([np.ones(60), X])
    beta, _ = ols_fit(A, y)
    resid = y - A @ beta
    assert np.all(np.abs(A.T @ resid) < 1e-8 * 60 * max(1.0, np.abs(y).max()))
    perm = g.permutation(60)
    ds, ds_p = cont_ds(y, *X.T), cont_ds(y[perm], *X[perm].T)
    for est in (Mean("x0"), OLS("x0", ("x1", "x2"), "x2")):
        a, b = estimate(ds, est), estimate(ds_p, est)
        assert abs(a.q - b.q) < 1e-12 and abs(a.u - b.u) < 1e-12


def test_parse_estimand():
    assert parse_estimand("mean:y1") == Mean("y1")
    assert parse_estimand("prop:y1=1") == Proportion("y1", "1")
    e = parse_estimand("ols:y1~y2+y3#y2")
    assert e == OLS("y1", ("y2", "y3"), "y2") and e.coef_index == 1
    assert parse_estimand("ols:y1~y2+y3#intercept").coef_index == 0
    assert parse_estimand("ols:y1~y2+y3#2").coef == "y3"
    assert parse_estimand("ols:y1~y2+y3").coef == "y2"
    for e in ("mean:y1", "prop:y1=1", "ols:y1~y2+y3#y3"):
        assert parse_estimand(e).label == e
    for bad in ("y1", "mean:", "prop:y1", "ols:y1", "ols:y1~y2#y9", "median:y1", "ols:y1~y2#5"):
        with pytest.raises(ValueError):
            parse_estimand(bad)


def test_check_estimand():
    schema = Schema((Column("y1", Binary()), Column("y2", Continuous(0, 1))))
    check_estimand(schema, Proportion("y1", "1"))
    with pytest.raises(EstimationError):
        check_estimand(schema, Proportion("y2", "1"))
    with pytest.raises(ValueError):
        check_estimand(schema, Mean("nope"))


def test_estimate_result_invariants():
    with pytest.raises(EstimationError):
        EstimateResult(1.0, -1e-3, 3)
    with pytest.raises(EstimationError):
        EstimateResult(float("nan"), 1.0, 3)
