import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surplus_ope.core import ObservationSet, PriceGrid
from surplus_ope.errors import DegenerateDataError, DomainError, SchemaError
from surplus_ope.estimators import BEHAVIOR, estimate_dm
from surplus_ope.nuisance import (
    CLIP_FLOOR,
    EmpiricalCDF,
    GaussianPropensity,
    KDEPropensity,
    KnownPropensity,
    LinearDemand,
    demand_from_dict,
    fit_demand_boosted,
    fit_demand_linear,
    fit_propensity_binned,
    fit_propensity_gaussian,
    fit_propensity_kde,
    make_folds,
    propensity_from_dict,
)
from surplus_ope.simbench import generate, get_scenario, make_world, oracle_surplus


def raw(x, p, y):
    """Duck-typed rows for fits whose outcomes are not binary."""
    return SimpleNamespace(features=np.asarray(x, dtype=float), prices=np.asarray(p, dtype=float),
                           outcomes=np.asarray(y, dtype=float))


def price_data(p, x=None, y=None):
    p = np.asarray(p, dtype=float)
    x = np.zeros((p.size, 0)) if x is None else x
    y = np.zeros(p.size) if y is None else y
    return ObservationSet(x, p, y, (float(p.min()), float(p.max())))


# ---------------------------------------------------------------- linear demand


def test_linear_noiseless_recovery():
    rng = np.random.default_rng(0)
    x = rng.random((50, 1))
    p = rng.random(50)
    mu = 0.3 + 0.2 * x[:, 0] - 0.25 * p
    fit = fit_demand_linear(raw(x, p, mu), clip=False)
    np.testing.assert_allclose(fit.coef, [0.2, -0.25, 0.3], atol=1e-8)


def test_linear_constant_purchase():
    rng = np.random.default_rng(1)
    d = ObservationSet(rng.random((30, 2)), rng.random(30), np.ones(30), (0.0, 1.0))
    for clip in (False, True):
        np.testing.assert_allclose(fit_demand_linear(d, clip=clip).coef, [0, 0, 0, 1], atol=1e-10)


def test_linear_residual_orthogonality():
    rng = np.random.default_rng(2)
    x = rng.random((400, 2))
    p = rng.random(400)
    y = (rng.random(400) < 0.2 + 0.5 * x[:, 0] * (1 - p)).astype(float)
    d = ObservationSet(x, p, y, (0.0, 1.0))
    fit = fit_demand_linear(d, clip=False)
    z = np.column_stack([x, p, np.ones(400)])
    assert np.max(np.abs(z.T @ (y - fit.predict(x, p)))) < 1e-8


def test_linear_rank_deficiency():
    x = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    d = ObservationSet(x, np.linspace(1, 2, 10), np.r_[np.ones(5), np.zeros(5)], (1.0, 2.0))
    with pytest.raises(DegenerateDataError):
        fit_demand_linear(d)
    with pytest.raises(DegenerateDataError):
        fit_demand_linear(price_data([1.0, 2.0]))


@settings(max_examples=30, deadline=None)
@given(coef=st.lists(st.floats(-3, 3), min_size=3, max_size=3), seed=st.integers(0, 1000))
def test_linear_prediction_is_affine_in_price(coef, seed):
    m = LinearDemand(coef)
    x = np.random.default_rng(seed).normal(size=(20, 1))
    diff = m.predict(x, np.full(20, 2.5)) - m.predict(x, np.full(20, 0.5))
    scale = 1.0 + np.abs(m.predict(x, np.full(20, 2.5))).max()
    assert np.all(np.abs(diff - 2.0 * coef[1]) <= 1e-14 * scale)


def test_clipped_linear_fit_matches_linear_valuation_dgp():
    sc = get_scenario("convergence")
    world = make_world(sc, 3)
    data = generate(sc, 8000, 4, world=world)[0]
    demand = fit_demand_linear(data)
    grid = PriceGrid.for_support(data.price_support)
    prop = KnownPropensity(world.logging)
    est = estimate_dm(data, demand, BEHAVIOR, grid, propensity=prop)
    oracle = oracle_surplus(world, world.logging, draws=1_000_000, rng_seed=5,
                            method="monte_carlo")
    se = math.hypot(est.stderr, oracle.stderr)
    assert abs(est.value - oracle.value) < 2 * se


# ---------------------------------------------------------------- boosted trees


def test_boosted_single_stump_within_leaf_variance():
    rng = np.random.default_rng(3)
    p = rng.uniform(0, 20, 600)
    # fewer distinct prices than histogram bins, so the cut at 10 is available
    q = rng.uniform(0, 20, 200)
    exact = price_data(q, y=(q < 10).astype(float))
    fit = fit_demand_boosted(exact, rounds=1, depth=1, rate=1.0)
    assert np.max(np.abs(fit.predict(exact.features, q) - exact.outcomes)) < 1e-12
    # with label noise the stump's training error is the within-leaf variance
    y = np.where(p < 10, rng.random(600) < 0.8, rng.random(600) < 0.1).astype(float)
    d = price_data(p, y=y)
    fit = fit_demand_boosted(d, rounds=1, depth=1, rate=1.0)
    pred = fit.predict(d.features, p)
    leaves = [y[pred == v] for v in np.unique(pred)]
    assert len(leaves) == 2
    within = sum(leaf.var() * leaf.size for leaf in leaves) / y.size
    assert np.mean((y - pred) ** 2) == pytest.approx(within, abs=1e-12)
    left, right = y[p < 10], y[p >= 10]
    assert within <= (left.var() * left.size + right.var() * right.size) / y.size


def test_boosted_rejects_bad_hyperparameters():
    d = price_data(np.linspace(0, 1, 20), y=np.r_[np.ones(10), np.zeros(10)])
    for kw in ({"rounds": 0}, {"depth": 0}, {"rate": 0.0}, {"rate": 1.5}):
        with pytest.raises(DomainError):
            fit_demand_boosted(d, **kw)


def test_boosted_training_mse_nonincreasing():
    rng = np.random.default_rng(4)
    x = rng.random((1000, 2))
    p = rng.uniform(0, 1, 1000)
    y = (rng.random(1000) < np.clip(x[:, 0] + 0.5 - p, 0, 1)).astype(float)
    d = ObservationSet(x, p, y, (0.0, 1.0))
    mses = [np.mean((y - fit_demand_boosted(d, rounds=m).predict(x, p)) ** 2)
            for m in (1, 5, 20, 60)]
    assert all(b <= a + 1e-12 for a, b in zip(mses, mses[1:]))


def test_boosted_step_demand_integrated_error():
    rng = np.random.default_rng(5)
    p = rng.uniform(8, 12, 4000)
    d = price_data(p, x=rng.random((4000, 1)), y=(p < 10).astype(float))
    fit = fit_demand_boosted(d)
    g = PriceGrid.uniform(8, 12, 401)
    x = np.full((1, 1), 0.5)
    err = (fit.predict_grid(x, g.midpoints)[0] - (g.midpoints < 10)) ** 2
    assert np.sum(err * g.weights) < 0.01


def test_boosted_json_round_trip_and_determinism():
    rng = np.random.default_rng(6)
    x = rng.random((300, 1))
    p = rng.random(300)
    y = (rng.random(300) < 1 - p).astype(float)
    d = ObservationSet(x, p, y, (0.0, 1.0))
    a = fit_demand_boosted(d, rounds=10, subsample=0.5, rng_seed=1)
    b = fit_demand_boosted(d, rounds=10, subsample=0.5, rng_seed=1)
    np.testing.assert_array_equal(a.predict(x, p), b.predict(x, p))
    back = demand_from_dict(a.to_dict())
    np.testing.assert_array_equal(back.predict_grid(x, [0.2, 0.7]), a.predict_grid(x, [0.2, 0.7]))
    with pytest.raises(SchemaError):
        demand_from_dict({**a.to_dict(), "schema_version": 99})


# ---------------------------------------------------------------- propensity


def test_kde_interior_density_and_cdf_endpoint():
    p = np.random.default_rng(7).random(100_000)
    m = fit_propensity_kde(price_data(p))
    assert 0.95 <= m.density(None, [0.5])[0] <= 1.05
    assert m.cdf_at(None, [p.max()])[0] == 1.0
    assert m.cdf_at(None, [p.min() - 1])[0] == 0.0


def test_kde_wider_bandwidth_is_smoother():
    p = np.random.default_rng(8).random(2000)
    z = np.linspace(0, 1, 500)
    tv = [np.abs(np.diff(fit_propensity_kde(price_data(p), bandwidth_rule=h).density(None, z)))
          .sum() for h in (0.02, 0.04, 0.08)]
    assert tv[0] > tv[1] > tv[2]


def test_kde_degenerate_prices():
    with pytest.raises(DegenerateDataError):
        fit_propensity_kde(ObservationSet(np.zeros((20, 0)), np.full(20, 3.0), np.zeros(20)))
    with pytest.raises(DegenerateDataError):
        fit_propensity_kde(price_data(np.arange(5.0)))


@pytest.mark.parametrize("kernel", ["tophat", "gaussian"])
def test_kde_density_floor_and_mass(kernel):
    p = np.random.default_rng(9).uniform(9, 11, 3000)
    m = fit_propensity_kde(price_data(p), kernel=kernel)
    g = PriceGrid.uniform(p.min(), p.max(), 2001)
    dens = m.density(None, g.midpoints)
    assert np.all(dens >= CLIP_FLOOR)
    assert 0.95 <= np.sum(dens * g.weights) <= 1.05
    cdf = m.cdf_at(None, g.nodes)
    assert np.all(np.diff(cdf) >= 0) and cdf[-1] == 1.0


def test_gaussian_moment_matching_and_misspecification():
    p = np.random.default_rng(10).random(200_000)
    m = fit_propensity_gaussian(price_data(p))
    assert m.mean == float(p.mean())
    assert abs(m.density(None, [0.5])[0] - 1 / (np.sqrt(2 * np.pi) / np.sqrt(12))) < 0.01
    assert m.density(None, [0.5])[0] > 1.3
    assert m.density(None, [50.0])[0] == CLIP_FLOOR


def test_empirical_cdf_right_continuous():
    f = EmpiricalCDF([1.0, 2.0, 2.0, 4.0])
    np.testing.assert_array_equal(f([0.5, 1.0, 2.0, 3.9, 4.0]), [0, 0.25, 0.75, 0.75, 1.0])


def test_binned_kde_conditions_on_feature():
    rng = np.random.default_rng(11)
    x = rng.random((4000, 1))
    p = np.where(x[:, 0] < 0.5, rng.uniform(0, 1, 4000), rng.uniform(1, 2, 4000))
    d = ObservationSet(x, p, np.zeros(4000), (0.0, 2.0))
    m = fit_propensity_binned(d, bins=2)
    assert m.density([[0.2]], [0.5])[0] > 0.8
    assert m.density([[0.8]], [0.5])[0] < 0.2


def test_propensity_json_round_trip():
    p = np.random.default_rng(12).random(100)
    for m in (fit_propensity_kde(price_data(p)), GaussianPropensity(1.0, 2.0)):
        back = propensity_from_dict(m.to_dict())
        z = np.linspace(0, 1, 11)
        np.testing.assert_array_equal(back.density(None, z), m.density(None, z))
    assert isinstance(propensity_from_dict(fit_propensity_kde(price_data(p)).to_dict()),
                      KDEPropensity)


# ---------------------------------------------------------------- folds


def test_fold_examples():
    assert sorted(make_folds(10, 2, 0).sizes()) == [5, 5]
    assert sorted(make_folds(7, 3, 0).sizes()) == [2, 2, 3]
    np.testing.assert_array_equal(make_folds(50, 4, 9).folds, make_folds(50, 4, 9).folds)
    with pytest.raises(DomainError):
        make_folds(3, 4, 0)
    with pytest.raises(DomainError):
        make_folds(10, 1, 0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 300), k=st.integers(2, 10), seed=st.integers(0, 10_000))
def test_folds_are_balanced_partitions(n, k, seed):
    if k > n:
        return
    f = make_folds(n, k, seed)
    sizes = f.sizes()
    assert sizes.sum() == n and sizes.max() - sizes.min() <= 1
    seen = np.concatenate([f.split(j)[1] for j in range(k)])
    np.testing.assert_array_equal(np.sort(seen), np.arange(n))
