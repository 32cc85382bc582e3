import csv

import numpy as np
import pytest
from scipy.special import ndtri

from surplus_ope.errors import DegenerateDataError, DomainError
from surplus_ope.inference import (
    CoverageResult,
    confidence_interval,
    coverage_experiment,
    eif_variance,
    normal_quantile,
    write_coverage_csv,
)
from surplus_ope.core import PriceGrid
from surplus_ope.estimators import BEHAVIOR, EifSamples, cross_fit, estimate_acpw
from surplus_ope.nuisance import make_folds
from surplus_ope.simbench import generate, get_scenario, make_world, run_study


def test_eif_variance_examples():
    assert eif_variance(EifSamples(np.ones(4), psi=np.full(4, 3.0)), 3.0) == 0.0
    assert eif_variance(np.array([0.0, 2.0]), 1.0) == 1.0
    with pytest.raises(DegenerateDataError):
        eif_variance(np.array([1.0]), 1.0)
    with pytest.raises(DomainError):
        eif_variance(EifSamples(np.ones(3)), 1.0)


def test_confidence_interval_examples():
    ci = confidence_interval(2.0, 0.0, 10, 0.1)
    assert ci.low == ci.high == 2.0
    ci = confidence_interval(0.0, 100.0, 100, 0.10)
    assert ci.high == pytest.approx(1.6449, abs=1e-4)
    ci = confidence_interval(0.0, 100.0, 100, 0.05)
    assert ci.high == pytest.approx(1.9600, abs=1e-4)
    assert ci.width == pytest.approx(2 * ci.z * np.sqrt(100.0 / 100), abs=1e-12)
    assert ci.contains(0.0) and not ci.contains(2.0)
    for alpha in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(DomainError):
            confidence_interval(0.0, 1.0, 10, alpha)
    with pytest.raises(DomainError):
        confidence_interval(0.0, -1.0, 10, 0.1)


def test_normal_quantile_accuracy():
    q = np.concatenate([np.linspace(1e-6, 1 - 1e-6, 2001), [1e-10, 0.5, 1 - 1e-10]])
    err = np.max(np.abs([normal_quantile(v) for v in q] - ndtri(q)))
    assert err < 1e-8
    with pytest.raises(DomainError):
        normal_quantile(1.0)


def test_coverage_with_alpha_half_and_zero_variance():
    res = coverage_experiment("convergence", 500, 200, alpha=0.5, rng_seed=3,
                              estimators=["ACPW"])
    assert abs(res["ACPW/target"].coverage - 0.5) <= 0.11
    res = coverage_experiment("convergence", 500, 50, alpha=0.1, rng_seed=3,
                              estimators=["ACPW"], variance_scale=0.0)
    assert res["ACPW/target"].coverage <= 0.05
    assert res["ACPW/target"].mean_ci_width == 0.0


def test_write_coverage_csv(tmp_path):
    rows = [CoverageResult("s", "ACPW", 100, 10, 0.1, 0.9, 0.25)]
    write_coverage_csv(tmp_path / "c.csv", rows)
    with open(tmp_path / "c.csv") as fh:
        got = list(csv.reader(fh))
    assert got[0] == ["scenario", "estimator", "n", "reps", "alpha", "coverage",
                      "mean_ci_width"]
    assert got[1] == ["s", "ACPW", "100", "10", "0.1", "0.9", "0.25"]


@pytest.mark.slow
def test_acpw_coverage_in_well_specified_scenario():
    res = coverage_experiment("convergence", 8000, 200, alpha=0.10, rng_seed=1,
                              estimators=["ACPW"], modes=("target", "behavior"))
    for key in ("ACPW/target", "ACPW/behavior"):
        assert 0.84 <= res[key].coverage <= 0.96, (key, res[key].coverage)


@pytest.mark.slow
def test_ci_width_halves_when_n_quadruples():
    rep = run_study("convergence", ["ACPW"], [2000, 8000], 50, 0.1, 2, modes=("target",))
    rows = {r["n"]: r for r in rep.summary()}
    ratio = rows[2000]["mean_ci_width"] / rows[8000]["mean_ci_width"]
    assert abs(ratio - 2.0) <= 0.15 * 2.0


@pytest.fixture(scope="module")
def band_design_replications():
    """ACPW on 200 fresh samples of one price-band world at n = 8000."""
    sc = get_scenario("ci_coverage")
    world = make_world(sc, np.random.SeedSequence(0))
    out = {"target": [], "behavior": []}
    for rep in range(200):
        data = generate(sc, 8000, np.random.SeedSequence([0, rep]), world=world)[0]
        grid = PriceGrid.for_support(data.price_support, sc.grid_size)
        cf = cross_fit(data, sc.demand_learner(), sc.propensity_learner(),
                       make_folds(data.n, 2, rep))
        for mode, policy in (("target", world.target), ("behavior", BEHAVIOR)):
            est = estimate_acpw(data, None, None, policy, grid=grid, crossfit=cf)
            out[mode].append((est.value, est.variance))
    return {k: np.array(v) for k, v in out.items()}


@pytest.mark.slow
@pytest.mark.parametrize("mode", ["behavior", "target"])
def test_eif_variance_matches_replication_spread(band_design_replications, mode):
    v = band_design_replications[mode]
    ratio = v[:, 1].mean() / (8000 * v[:, 0].var(ddof=1))
    print(f"{mode}: mean EIF variance / (n * replication variance) = {ratio:.3f}")
    assert abs(ratio - 1.0) <= 0.15
