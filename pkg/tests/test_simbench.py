import json

import numpy as np
import pytest

from surplus_ope.core import DiscreteGrid, UniformInterval
from surplus_ope.errors import DomainError
from surplus_ope.simbench import (
    ValuationLaw,
    example_instance,
    generate,
    get_scenario,
    list_scenarios,
    make_world,
    oracle_surplus,
    random_instance,
    run_study,
    valuation_support,
)

POINT_SCENARIOS = ["demand_misspec", "propensity_misspec", "convergence", "inequality_r05",
                   "ci_coverage"]


# ---------------------------------------------------------------- generation


def test_registry_lists_all_scenarios():
    assert set(list_scenarios()) >= {"demand_misspec", "propensity_misspec", "convergence",
                                     "inequality_r05", "ci_coverage", "partial_id_gap"}
    with pytest.raises(DomainError, match="registered"):
        get_scenario("nope")


def test_demand_misspec_valuations_stay_in_theoretical_range():
    # 90 -/+ 3000 * 0.1 * 0.25, plus noise up to 10
    lo, hi = valuation_support(get_scenario("demand_misspec"))
    assert (lo, hi) == pytest.approx((15.0, 175.0))
    for seed in range(20):
        data, v, world = generate("demand_misspec", 3, seed)
        assert np.all((v >= 15.0) & (v <= 175.0))
        w_lo, w_hi = valuation_support(world.scenario, world.beta)
        assert np.all((v >= w_lo) & (v <= w_hi))
        np.testing.assert_array_equal(data.outcomes, (v > data.prices).astype(float))


@pytest.mark.parametrize("name", POINT_SCENARIOS + ["partial_id_gap"])
def test_outcomes_are_purchase_indicators(name):
    data, v, world = generate(name, 2000, 3)
    np.testing.assert_array_equal(data.outcomes, (v > data.prices).astype(float))
    lo, hi = world.support
    assert np.all((data.prices >= lo) & (data.prices <= hi))


def test_gap_scenario_never_logs_prices_inside_the_gap():
    data, _, _ = generate("partial_id_gap", 4000, 0)
    p = data.prices
    assert not np.any((p > 9.5) & (p < 10.0))
    assert np.any(p < 9.5) and np.any(p > 10.0)
    assert set(np.unique(data.features)) == {0.0, 1.0} and data.d == 10


def test_generation_is_deterministic_per_seed():
    a = generate("convergence", 500, 42)
    b = generate("convergence", 500, 42)
    np.testing.assert_array_equal(a[0].prices, b[0].prices)
    np.testing.assert_array_equal(a[1], b[1])
    c = generate("convergence", 500, 43)
    assert not np.array_equal(a[0].prices, c[0].prices)


def test_realized_support_flag_uses_sample_extremes():
    data, v, _ = generate("demand_misspec", 300, 1, realized_support=True)
    assert data.price_support == pytest.approx((v.min() - 0.05, v.max() + 0.05))


def test_per_observation_coefficients():
    sc = get_scenario("convergence").with_options(coef_mode="observation")
    world = make_world(sc, 0)
    assert world.beta is None
    data, v = world.sample(1000, np.random.default_rng(1))
    lo, hi = valuation_support(sc)
    assert np.all((v >= lo) & (v <= hi))
    with pytest.raises(DomainError):
        world.true_demand()


# ---------------------------------------------------------------- oracles


def test_oracle_degenerate_valuation():
    law = ValuationLaw(lambda m, rng: np.zeros((m, 0)), lambda x, rng: np.full(x.shape[0], 7.5))
    out = oracle_surplus(law, DiscreteGrid([3.0]), draws=1000, rng_seed=0)
    assert out.value == 4.5 and out.stderr == 0.0


def test_oracle_closed_form_example_and_stderr_scaling():
    law = ValuationLaw(lambda m, rng: np.zeros((m, 0)),
                       lambda x, rng: np.sqrt(rng.random(x.shape[0])))
    pol = UniformInterval(0.0, 1.0)
    big = oracle_surplus(law, pol, draws=1_000_000, rng_seed=1)
    assert abs(big.value - 0.25) < 1e-3
    small = oracle_surplus(law, pol, draws=200_000, rng_seed=2)
    double = oracle_surplus(law, pol, draws=400_000, rng_seed=3)
    assert abs(small.stderr / double.stderr - np.sqrt(2.0)) <= 0.1 * np.sqrt(2.0)


@pytest.mark.parametrize("name", POINT_SCENARIOS + ["partial_id_gap"])
def test_closed_form_oracle_matches_monte_carlo(name):
    world = make_world(get_scenario(name), np.random.default_rng(7))
    assert world.has_closed_form()
    for policy in (world.target, world.logging):
        exact = oracle_surplus(world, policy, method="closed_form")
        mc = oracle_surplus(world, policy, method="monte_carlo", draws=200_000, rng_seed=8)
        assert abs(exact.value - mc.value) <= 3 * mc.stderr + 1e-12, (exact, mc)


def test_oracle_power_mean_below_plain_mean():
    world = make_world(get_scenario("inequality_r05"), 3)
    plain = oracle_surplus(world, world.target, 1.0).value
    half = oracle_surplus(world, world.target, 0.5).value
    assert half ** 2 <= plain + 1e-12  # power mean inequality


def test_discrete_instance_helpers():
    inst = example_instance()
    np.testing.assert_array_equal(inst.widths, [1.0, 1.0, 1.0])
    # logging surplus by hand: type 0 tails (1.5, 0.75, 0.25), type 1 (2.25, 1.25, 0.5)
    assert inst.surplus() == pytest.approx(0.5 * (2.5 / 3) + 0.5 * (4.0 / 3))
    data = inst.enumerate(24)
    assert data.n == 24
    with pytest.raises(ValueError):
        inst.enumerate(5)
    r = random_instance(np.random.default_rng(0), 4, 2)
    assert np.all(np.diff(r.prices) > 0) and np.all(np.diff(r.demand, axis=1) <= 0)
    np.testing.assert_allclose(r.logging.sum(axis=1), 1.0)


# ---------------------------------------------------------------- studies


def test_run_report_invariants(tmp_path):
    rep = run_study("demand_misspec", ["DM", "CPW", "ACPW"], [300, 600], 4, 0.1, 5)
    assert len(rep.records) == 3 * 2 * 2 * 4
    for row in rep.summary():
        assert abs(row["mse"] - (row["bias"] ** 2 + row["variance"])) < 1e-10
        assert 0.0 <= row["coverage"] <= 1.0
    rep.write_csv(tmp_path / "a.csv")
    rep.write_json(tmp_path / "a.json", timing=False)
    doc = json.loads((tmp_path / "a.json").read_text())
    assert doc["seeds"]["master"] == 5 and doc["config"]["reps"] == 4
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header.startswith("scenario,estimator,mode,n,rep,estimate,truth,error")


def test_study_is_reproducible_and_independent_of_other_sizes():
    a = run_study("convergence", ["ACPW"], [300, 500], 3, 0.1, 11)
    b = run_study("convergence", ["ACPW"], [300, 500], 3, 0.1, 11)
    assert [r.row() for r in a.records] == [r.row() for r in b.records]
    c = run_study("convergence", ["ACPW"], [500], 3, 0.1, 11)
    assert [r.row() for r in a.select(n=500)] == [r.row() for r in c.records]


def test_parallel_study_matches_serial():
    a = run_study("propensity_misspec", ["CPW"], [300], 2, 0.1, 3)
    b = run_study("propensity_misspec", ["CPW"], [300], 2, 0.1, 3, n_jobs=2)
    assert [r.row() for r in a.records] == [r.row() for r in b.records]


def test_study_errors_carry_replication_id():
    bad = get_scenario("convergence").with_options(demand="bogus")
    with pytest.raises(DomainError, match="replication 0"):
        run_study(bad, ["DM"], [100], 2)
    with pytest.raises(DomainError):
        run_study("convergence", ["LC-bounds"], [100], 1)
    with pytest.raises(DomainError):
        run_study("convergence", ["DM"], [100], 1, alpha=1.5)


def test_bounds_study_records_intervals():
    rep = run_study("partial_id_gap", None, [1000], 2, master_seed=1)
    lc = rep.select("LC-bounds")
    naive = rep.select("naive-bounds")
    assert len(lc) == len(naive) == 2
    for a, b in zip(lc, naive):
        assert b.ci_low <= a.ci_low <= a.ci_high <= b.ci_high


@pytest.mark.slow
@pytest.mark.parametrize("name", POINT_SCENARIOS)
def test_behavior_mode_estimates_match_logging_oracle(name):
    rep = run_study(name, ["DM", "CPW", "ACPW"], [16000], 1, modes=("behavior",))
    for r in rep.records:
        if name == "demand_misspec" and r.estimator == "DM":
            continue  # a misspecified plug-in keeps its bias at any n
        assert abs(r.error) <= 3 * np.sqrt(r.variance / r.n), (r.estimator, r.error)


@pytest.mark.slow
def test_demand_misspec_mse_examples(study):
    rep = study("demand_misspec", ["DM", "CPW", "ACPW"], [500, 1000, 2000, 4000], 100)
    mse = {(r["estimator"], r["n"]): r["mse"] for r in rep.summary() if r["mode"] == "target"}
    for est in ("ACPW", "CPW"):
        seq = [mse[(est, n)] for n in (500, 1000, 2000, 4000)]
        assert all(b < a for a, b in zip(seq, seq[1:])), (est, seq)
    assert mse[("DM", 4000)] > 0.5 * mse[("DM", 500)]
