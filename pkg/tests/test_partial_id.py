import json

import numpy as np
import pytest
from scipy.stats import norm

from surplus_ope.core import PriceGrid, UniformInterval
from surplus_ope.errors import DegenerateDataError, DomainError
from surplus_ope.estimators import estimate_dm
from surplus_ope.nuisance import FunctionDemand, LinearLearner
from surplus_ope.partial_id import OverlapMap, estimate_bounds, lower_envelope, upper_envelope
from surplus_ope.simbench import get_scenario, make_world

# ---------------------------------------------------------------- envelopes


def test_lower_envelope_examples():
    assert lower_envelope(0.9, 0.4, 1.5, 1.0, 2.0) == pytest.approx(0.6, abs=1e-15)
    assert lower_envelope(0.9, 0.4, 1.0, 1.0, 2.0) == 0.9
    assert lower_envelope(0.9, 0.4, 2.0, 1.0, 2.0) == pytest.approx(0.4, abs=1e-15)
    z = np.linspace(0.3, 1.7, 100)
    lo = lower_envelope(np.exp(-2.5 * 0.3), np.exp(-2.5 * 1.7), z, 0.3, 1.7)
    assert np.all(lo <= np.exp(-2.5 * z) + 1e-12)


def test_lower_envelope_zero_anchor_and_errors():
    out = lower_envelope(0.8, 0.0, np.array([1.0, 1.2, 2.0]), 1.0, 2.0)
    np.testing.assert_array_equal(out, [0.8, 0.0, 0.0])
    with pytest.raises(DomainError):
        lower_envelope(0.9, 0.4, 1.5, 2.0, 1.0)
    with pytest.raises(DomainError):
        lower_envelope(0.9, 0.4, 2.5, 1.0, 2.0)
    with pytest.raises(DomainError):
        lower_envelope(1.2, 0.4, 1.5, 1.0, 2.0)


def test_monotone_lower_flag_never_loosens():
    z = np.linspace(1.0, 2.0, 11)
    plain = lower_envelope(0.9, 0.4, z, 1.0, 2.0)
    tight = lower_envelope(0.9, 0.4, z, 1.0, 2.0, monotone=True)
    assert np.all(tight >= plain) and np.all(tight >= 0.4)


def test_upper_envelope_examples():
    # only the left pair: e^{u1} = 0.4^2 / 0.9, below the cap mu(z2) = 0.4
    got = upper_envelope(3.0, (1.0, 2.0, 3.5, None), (0.9, 0.4, 0.1, None))
    assert got == pytest.approx(0.4 ** 2 / 0.9, abs=1e-12)
    assert upper_envelope(2.5, (None, 2.0, 3.0, None), (None, 0.5, 0.2, None)) == 1.0
    # only the right pair: e^{u2} = 0.4 * (4/3)^(1/2), then the cap mu(z2)
    got = upper_envelope(2.5, (None, 2.0, 3.0, 4.0), (None, 0.5, 0.4, 0.3))
    assert got == pytest.approx(0.4 * np.sqrt(4.0 / 3.0), abs=1e-12)
    got = upper_envelope(2.5, (None, 2.0, 3.0, 4.0), (None, 0.42, 0.4, 0.3))
    assert got == 0.42


def test_upper_envelope_rejects_malformed_patterns():
    with pytest.raises(DomainError):
        upper_envelope(2.5, (1.0, None, 3.0, 4.0), (0.9, None, 0.4, 0.3))
    with pytest.raises(DomainError):
        upper_envelope(2.5, (2.0, 2.0, 3.0, 4.0), (0.9, 0.5, 0.4, 0.3))
    with pytest.raises(DomainError):
        upper_envelope(3.5, (1.0, 2.0, 3.0, 4.0), (0.9, 0.5, 0.4, 0.3))
    with pytest.raises(DomainError):
        upper_envelope(2.5, (1.0, 2.0, 3.0, 4.0), (0.9, 0.5, 1.4, 0.3))


def truncated(sf, v_max):
    """Survival of a valuation law restricted to ``[0, v_max]``, so ``mu(0) = 1``."""
    return lambda z: np.clip((sf(z) - sf(v_max)) / (sf(0.0) - sf(v_max)), 0.0, 1.0)


# valuations on [0, v_max] with log-concave densities, matching the sentinels
BATTERY = {
    "exponential": (truncated(lambda z: np.exp(-0.8 * z), 6.0), 6.0),
    "linear-truncated": (lambda z: np.clip(1.0 - z / 4.0, 0.0, 1.0), 4.0),
    "gaussian-tail": (truncated(lambda z: norm.sf(z - 1.5), 6.0), 6.0),
}


@pytest.mark.parametrize("name", sorted(BATTERY))
def test_envelope_sandwich_on_log_concave_demands(name):
    mu, v_max = BATTERY[name]
    anchors = np.array([0.4, 0.9, 1.1, 2.6, 3.0, 3.3])
    overlap = OverlapMap(anchors, v_max)
    z = np.linspace(0.0, v_max, 1201)
    z = z[~np.isin(z, anchors)]  # anchored prices are covered, never enveloped
    (z1, z2, z3, z4), overrides = overlap.neighbours(z)

    def at(zk, ok):
        vals = np.where(np.isnan(zk), np.nan, mu(np.nan_to_num(zk)))
        return np.where(np.isnan(ok), vals, ok)

    m1, m2, m3, m4 = (at(zk, ok) for zk, ok in zip((z1, z2, z3, z4), overrides))
    lo = lower_envelope(m2, m3, z, z2, z3)
    up = upper_envelope(z, (z1, z2, z3, z4), (m1, m2, m3, m4))
    truth = mu(z)
    assert np.all(lo <= truth + 1e-9)
    assert np.all(truth <= up + 1e-9)
    assert np.all((lo >= 0) & (up <= 1))


def test_overlap_map_neighbours_use_sentinels():
    ov = OverlapMap(np.array([1.0, 2.0, 4.0]), 5.0)
    (z1, z2, z3, z4), (o1, o2, o3, o4) = ov.neighbours([0.5, 3.0, 4.5])
    np.testing.assert_array_equal(z2, [0.0, 2.0, 4.0])
    np.testing.assert_array_equal(z3, [1.0, 4.0, 5.0])
    assert o2[0] == 1.0 and o3[2] == 0.0
    assert np.isnan(z1[0]) and z1[1] == 1.0 and z4[1] == 5.0 and o4[1] == 0.0
    assert z1[2] == 2.0 and np.isnan(z4[2]) and np.isnan(o1[1])
    with pytest.raises(DomainError):
        OverlapMap(np.array([1.0, 2.0]), 1.5)
    with pytest.raises(DegenerateDataError):
        OverlapMap(np.array([]), 1.0)


# ---------------------------------------------------------------- bounds


def test_full_overlap_bounds_equal_dm(unit_example, unit_policy):
    data = unit_example(3000, seed=4)
    demand = LinearLearner().fit(data)
    grid = PriceGrid.uniform(0.0, 1.0, 200)
    overlap = OverlapMap(data.prices, 1.0, support=((0.0, 1.0),))
    b = estimate_bounds(data, demand, unit_policy, overlap, grid)
    dm = estimate_dm(data, demand, unit_policy, grid).value
    assert b.covered.all()
    assert b.lower == b.upper
    assert abs(b.lower - dm) < 1e-12
    assert b.naive_lower == b.lower == b.naive_upper


@pytest.fixture(scope="module")
def gap_setup():
    sc = get_scenario("partial_id_gap")
    world = make_world(sc, np.random.default_rng(12))
    data, _ = world.sample(4000, np.random.default_rng(13))
    top = data.price_support[1]
    grid = PriceGrid(np.union1d(np.linspace(9.0, top, 200), np.linspace(top, world.v_max, 200)))
    return sc, world, data, grid


def test_gap_bounds_are_ordered_and_inside_naive(gap_setup):
    sc, world, data, grid = gap_setup
    overlap = OverlapMap.from_prices(data.prices, world.v_max, support=sc.price_intervals)
    b = estimate_bounds(data, LinearLearner().fit(data), world.target, overlap, grid)
    assert not b.covered.all()
    assert b.naive_lower <= b.lower <= b.upper <= b.naive_upper
    assert b.length < b.naive_length
    assert np.all((b.lower_trace >= 0) & (b.upper_trace <= 1))
    assert np.all(b.lower_trace <= b.upper_trace + 1e-12)


def test_adding_an_anchor_in_the_gap_never_widens(gap_setup):
    sc, world, data, grid = gap_setup
    # strictly log-concave and positive at every anchor, so the anchor floor never binds
    centre = lambda x: 9.5 + 0.1 * x.sum(axis=1)  # noqa: E731
    demand = FunctionDemand(lambda x, p: norm.sf(p - centre(x)) / norm.sf(-centre(x)),
                            grid_fn=lambda x, z: norm.sf(z[None, :] - centre(x)[:, None])
                            / norm.sf(-centre(x))[:, None])
    base = OverlapMap(data.prices, world.v_max, support=sc.price_intervals)
    b0 = estimate_bounds(data, demand, world.target, base, grid)
    for extra in ([9.75], [9.75, 9.6], [9.75, 9.6, 9.9], [9.75, 9.6, 9.9, 9.55]):
        more = OverlapMap(np.append(data.prices, extra), world.v_max, support=sc.price_intervals)
        b1 = estimate_bounds(data, demand, world.target, more, grid)
        assert b1.lower >= b0.lower - 1e-12
        assert b1.upper <= b0.upper + 1e-12
        assert b1.length < b0.length
        b0 = b1


def test_empty_overlap_is_degenerate(unit_example, unit_policy):
    data = unit_example(200)
    overlap = OverlapMap(data.prices, 1.0, support=((5.0, 6.0),))
    with pytest.raises(DegenerateDataError):
        estimate_bounds(data, LinearLearner().fit(data), unit_policy, overlap,
                        PriceGrid.uniform(0.0, 1.0, 50))


def test_bound_report_json(tmp_path, gap_setup):
    sc, world, data, grid = gap_setup
    overlap = OverlapMap.from_prices(data.prices, world.v_max, support=sc.price_intervals)
    b = estimate_bounds(data, FunctionDemand(lambda x, p: np.exp(-0.1 * p)), world.target,
                        overlap, grid)
    b.write_json(tmp_path / "b.json")
    doc = json.loads((tmp_path / "b.json").read_text())
    assert doc["lower"] == b.lower and doc["upper"] == b.upper
    assert len(doc["nodes"]) == len(doc["lower_envelope"]) == len(doc["upper_envelope"])
    assert set(doc["covered"]) <= {0, 1}
    assert UniformInterval(0, 1).to_dict()  # policies serialise alongside bound reports
