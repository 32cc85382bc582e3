"""Registered data-generating processes and their surplus oracles.

Every scenario draws valuations ``V = c + s * beta . t(X) + eps`` with
``eps ~ U[0, w]`` and ``t`` either the identity or the elementwise square,
then logs ``Y = 1{V > P}`` at prices from a known logging law. Because the
noise is uniform, demand given ``x`` is a clamped linear function of price
and every conditional surplus has a closed form.

A *world* fixes the random parts that persist across sample sizes within one
replication: the coefficient vector ``beta`` and the target policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..core.data import ObservationSet
from ..core.policies import DiscreteGrid, PiecewiseUniform, PricingPolicy, SoftmaxRevenue
from ..errors import DomainError
from ..nuisance.demand import BoostedLearner, FunctionDemand, LinearLearner
from ..nuisance.propensity import GaussianLearner, KDELearner

PRICE_PAD = 0.05
QUAD_NODES = 4096


@dataclass(frozen=True)
class Scenario:
    """A data-generating process plus the nuisance learners and target recipe.

    Attributes
    ----------
    features : ``("uniform", low, high)`` or ``("bernoulli", prob)``
    coef_range : bounds of the uniform law of each coefficient
    intercept, scale, transform : valuation index ``c + s * beta . t(x)``
    noise_width : ``w`` in ``eps ~ U[0, w]``
    price_intervals : logging law as disjoint intervals (uniform on their
        union); ``None`` means the theoretical valuation support padded by
        0.05 on each side
    demand, propensity : learner tags used by the study runner
    target : ``"softmax"`` or ``("grid", points)`` for uniform masses
    estimators : estimators computed by default in studies
    r : inequality exponent for the inequality-aware estimators
    study : ``"point"`` or ``"bounds"``
    demand_options : ``(name, value)`` pairs passed to the boosted learner
    """

    name: str
    description: str
    d: int
    features: tuple
    coef_range: tuple
    intercept: float
    scale: float
    transform: str
    noise_width: float
    price_intervals: tuple | None
    demand: str
    propensity: str
    target: object = "softmax"
    estimators: tuple = ("DM", "CPW", "ACPW")
    r: float = 1.0
    study: str = "point"
    demand_options: tuple = ()
    coef_mode: str = "replication"
    softmax_points: int = 5
    temperature: float = 1.0
    pilot_n: int = 2000
    grid_size: int = 200
    n_grid: tuple = (500, 1000, 2000, 4000)
    reps: int = 100
    alpha: float = 0.10
    notes: dict = field(default_factory=dict)

    def demand_learner(self):
        if self.demand == "linear":
            return LinearLearner()
        if self.demand == "linear_ols":
            return LinearLearner(clip=False)
        if self.demand == "boosted":
            return BoostedLearner(**dict(self.demand_options))
        raise DomainError(f"unknown demand learner {self.demand!r}")

    def propensity_learner(self):
        if self.propensity == "kde":
            return KDELearner("tophat")
        if self.propensity == "gaussian":
            return GaussianLearner()
        raise DomainError(f"unknown propensity learner {self.propensity!r}")

    def with_options(self, **changes) -> Scenario:
        return replace(self, **changes)


# ---------------------------------------------------------------- closed forms


def demand_curve(index, noise_width, prices):
    """``P(index + eps > p)`` for ``eps ~ U[0, w]``: clamped linear in price."""
    return np.clip((index + noise_width - prices) / noise_width, 0.0, 1.0)


def _antiderivative(z, a, w):
    """``G(z)`` with ``G' = mu``: ``z`` below ``a``, quadratic ramp, flat above ``a + w``."""
    b = a + w
    ramp = a + (w * w - (b - z) ** 2) / (2.0 * w)
    return np.where(z <= a, z, np.where(z >= b, a + 0.5 * w, ramp))


def _integrate_antiderivative(lo, hi, a, w):
    """``int_lo^hi G(z) dz`` for ``lo <= hi`` (all broadcastable)."""
    b = a + w
    total = np.zeros(np.broadcast(lo, hi, a).shape)
    # below a: G(z) = z
    l1, h1 = lo, np.minimum(hi, a)
    total = total + np.where(h1 > l1, 0.5 * (h1 * h1 - l1 * l1), 0.0)
    # ramp
    l2, h2 = np.maximum(lo, a), np.minimum(hi, b)
    span = h2 - l2
    cube = ((b - l2) ** 3 - (b - h2) ** 3) / 3.0
    ramp = a * span + 0.5 * w * span - cube / (2.0 * w)
    total = total + np.where(span > 0, ramp, 0.0)
    # above b: G = a + w/2
    l3, h3 = np.maximum(lo, b), hi
    total = total + np.where(h3 > l3, (a + 0.5 * w) * (h3 - l3), 0.0)
    return total


def truncated_tail(index, noise_width, prices, p_max):
    """``int_p^{p_max} P(V > z | x) dz`` for each ``(index, p)`` pair."""
    top = _antiderivative(p_max, index, noise_width)
    return np.maximum(top - _antiderivative(np.minimum(prices, p_max), index, noise_width), 0.0)


def conditional_surplus(policy: PricingPolicy, features, index, noise_width, p_max):
    """``S(pi | x) = int pi(p|x) int_p^{p_max} mu(x, z) dz dp`` row by row."""
    index = np.asarray(index, dtype=float).reshape(-1)
    if isinstance(policy, PiecewiseUniform):
        top = _antiderivative(p_max, index, noise_width)
        out = np.zeros(index.size)
        for (lo, hi), m in zip(policy.intervals, policy.masses):
            hi_c = min(hi, p_max)
            if hi_c <= lo:
                continue
            inner = (hi_c - lo) * top - _integrate_antiderivative(lo, hi_c, index, noise_width)
            out += m / (hi - lo) * inner
        return out
    pts = policy.points
    probs = policy.probs(features)
    tails = truncated_tail(index[:, None], noise_width, pts[None, :], p_max)
    return np.sum(probs * tails, axis=1)


# ---------------------------------------------------------------- worlds


@dataclass
class World:
    """One replication's fixed randomness: coefficients and target policy."""

    scenario: Scenario
    beta: np.ndarray | None
    logging: PiecewiseUniform
    target: PricingPolicy | None = None

    @property
    def support(self) -> tuple[float, float]:
        return self.logging.support()

    @property
    def p_max(self) -> float:
        return self.support[1]

    @property
    def v_max(self) -> float:
        """Smallest price at which nobody buys: the top of the valuation support."""
        return valuation_support(self.scenario, self.beta)[1]

    def transform(self, x):
        return x * x if self.scenario.transform == "square" else x

    def index(self, x, beta=None):
        beta = self.beta if beta is None else beta
        t = self.transform(np.asarray(x, dtype=float))
        if beta.ndim == 2:
            lin = np.sum(t * beta, axis=1)
        else:
            lin = t @ beta
        return self.scenario.intercept + self.scenario.scale * lin

    def sample_features(self, n, rng):
        sc = self.scenario
        kind = sc.features[0]
        if kind == "uniform":
            return rng.uniform(sc.features[1], sc.features[2], size=(n, sc.d))
        if kind == "bernoulli":
            return (rng.random((n, sc.d)) < sc.features[1]).astype(float)
        raise DomainError(f"unknown feature law {kind!r}")

    def sample_coefs(self, n, rng):
        lo, hi = self.scenario.coef_range
        return rng.uniform(lo, hi, size=(n, self.scenario.d))

    def sample_valuations(self, x, rng):
        if self.beta is None:
            idx = self.index(x, self.sample_coefs(x.shape[0], rng))
        else:
            idx = self.index(x)
        return idx + rng.uniform(0.0, self.scenario.noise_width, size=x.shape[0])

    def sample(self, n, rng, realized_support=False):
        """Draw ``n`` logged observations; also returns the valuations."""
        x = self.sample_features(n, rng)
        v = self.sample_valuations(x, rng)
        logging = self.logging
        if realized_support:
            logging = PiecewiseUniform([[v.min() - PRICE_PAD, v.max() + PRICE_PAD]])
        p = logging.sample(x, rng)
        y = (v > p).astype(float)
        support = logging.support() if realized_support else self.support
        return ObservationSet(x, p, y, support), v

    def true_demand(self) -> FunctionDemand:
        """Demand ``P(V > p | x)``; only defined with per-replication coefficients."""
        if self.beta is None:
            raise DomainError("demand given x alone is not linear-index when coefficients vary by row")
        w = self.scenario.noise_width
        return FunctionDemand(
            lambda x, p: demand_curve(self.index(x), w, p),
            label=f"{self.scenario.name}-truth",
            grid_fn=lambda x, z: demand_curve(self.index(x)[:, None], w, z[None, :]),
        )

    def has_closed_form(self) -> bool:
        return self.beta is not None and (
            self.scenario.features[0] == "bernoulli" and self.scenario.d <= 16
            or self.scenario.features[0] == "uniform" and self.scenario.d == 1
        )

    def quadrature(self):
        """Feature nodes and weights that integrate exactly or to high accuracy."""
        sc = self.scenario
        if sc.features[0] == "bernoulli":
            grid = np.array(np.meshgrid(*[[0.0, 1.0]] * sc.d, indexing="ij")).reshape(sc.d, -1).T
            q = sc.features[1]
            ones = grid.sum(axis=1)
            return grid, q**ones * (1 - q) ** (sc.d - ones)
        lo, hi = sc.features[1], sc.features[2]
        x = lo + (hi - lo) * (np.arange(QUAD_NODES) + 0.5) / QUAD_NODES
        return x.reshape(-1, 1), np.full(QUAD_NODES, 1.0 / QUAD_NODES)


def _index_range(sc: Scenario, beta):
    if sc.features[0] == "uniform":
        lo, hi = sc.features[1], sc.features[2]
    else:
        lo, hi = 0.0, 1.0
    if sc.transform == "square":
        cands = [lo * lo, hi * hi] + ([0.0] if lo < 0 < hi else [])
        t_lo, t_hi = min(cands), max(cands)
    else:
        t_lo, t_hi = lo, hi
    a = np.minimum(beta * t_lo, beta * t_hi).sum()
    b = np.maximum(beta * t_lo, beta * t_hi).sum()
    base = sc.intercept
    ends = (base + sc.scale * a, base + sc.scale * b)
    return min(ends), max(ends)


def valuation_support(sc: Scenario, beta=None) -> tuple[float, float]:
    """Theoretical range of ``V``; with per-row coefficients, over all coefficients."""
    if beta is None:
        lo, hi = sc.coef_range
        # the index is linear in each coefficient, so extremes sit at the corners
        ends = [_index_range(sc, np.full(sc.d, b)) for b in (lo, hi)]
        v_lo = min(e[0] for e in ends)
        v_hi = max(e[1] for e in ends)
        for j in range(sc.d):  # mixed corners for d > 1
            mix = np.full(sc.d, lo)
            mix[j] = hi
            e = _index_range(sc, mix)
            v_lo, v_hi = min(v_lo, e[0]), max(v_hi, e[1])
    else:
        v_lo, v_hi = _index_range(sc, np.asarray(beta, dtype=float))
    return v_lo, v_hi + sc.noise_width


def make_world(sc: Scenario, rng) -> World:
    """Draw coefficients, fix the logging law and fit the target policy."""
    rng = np.random.default_rng(rng)
    beta = None
    if sc.coef_mode == "replication":
        beta = rng.uniform(sc.coef_range[0], sc.coef_range[1], size=sc.d)
    elif sc.coef_mode != "observation":
        raise DomainError(f"unknown coefficient mode {sc.coef_mode!r}")
    if sc.price_intervals is None:
        v_lo, v_hi = valuation_support(sc, beta)
        logging = PiecewiseUniform([[v_lo - PRICE_PAD, v_hi + PRICE_PAD]])
    else:
        logging = PiecewiseUniform(sc.price_intervals)
    world = World(sc, beta, logging)
    lo, hi = world.support
    if sc.target == "softmax":
        pilot, _ = world.sample(sc.pilot_n, rng)
        model = BoostedLearner().fit(pilot)
        points = np.linspace(lo, hi, sc.softmax_points)
        world.target = SoftmaxRevenue(model, points, sc.temperature)
    elif isinstance(sc.target, tuple) and sc.target[0] == "grid":
        world.target = DiscreteGrid(sc.target[1])
    else:
        raise DomainError(f"unknown target recipe {sc.target!r}")
    return world


def generate(scenario, n: int, rng_seed=None, world: World | None = None, realized_support=False):
    """Simulate ``n`` observations; returns ``(data, valuations, world)``.

    A fresh world is drawn from the seed unless one is supplied.
    """
    sc = get_scenario(scenario) if isinstance(scenario, str) else scenario
    rng = np.random.default_rng(rng_seed)
    if world is None:
        world = make_world(sc, rng)
    data, v = world.sample(n, rng, realized_support=realized_support)
    return data, v, world


# ---------------------------------------------------------------- oracles


@dataclass(frozen=True)
class OracleValue:
    value: float
    stderr: float
    method: str
    draws: int | None = None


@dataclass(frozen=True)
class ValuationLaw:
    """Free-form law for oracle checks: callables drawing ``X`` and ``V | X``."""

    sample_features: object
    sample_valuations: object


def _power_floor(s, r):
    return np.power(np.maximum(s, 0.0 if r > 0 else 1e-6), r)


def oracle_surplus(world, policy: PricingPolicy, r: float = 1.0, draws: int | None = None,
                   rng_seed=None, method: str | None = None, p_max: float | None = None
                   ) -> OracleValue:
    """True surplus ``E[S(pi|X)^r]`` with valuations truncated at ``p_max``.

    Parameters
    ----------
    world : World or ValuationLaw
    policy : PricingPolicy
    r : float
        ``r = 1`` is plain surplus.
    draws : int, optional
        Monte Carlo sample size; defaults to 10**6.
    method : ``"closed_form"`` or ``"monte_carlo"``
        Closed form needs a world with per-replication coefficients; it
        integrates features by enumeration or fine midpoint quadrature.
    p_max : float, optional
        Truncation point; defaults to the world's price-support maximum, and
        to no truncation for a :class:`ValuationLaw`.
    """
    if method is None:
        method = "closed_form" if isinstance(world, World) and world.has_closed_form() \
            else "monte_carlo"
    if isinstance(world, World) and p_max is None:
        p_max = world.p_max
    if method == "closed_form":
        if not isinstance(world, World) or not world.has_closed_form():
            raise DomainError("closed-form oracle needs per-replication coefficients")
        x, wts = world.quadrature()
        s = conditional_surplus(policy, x, world.index(x), world.scenario.noise_width, p_max)
        return OracleValue(float(np.dot(wts, _power_floor(s, r))), 0.0, method)
    if method != "monte_carlo":
        raise DomainError(f"unknown oracle method {method!r}")
    draws = int(draws or 1_000_000)
    rng = np.random.default_rng(rng_seed)
    vals = np.empty(draws)
    chunk = 200_000
    for i in range(0, draws, chunk):
        m = min(chunk, draws - i)
        x = world.sample_features(m, rng)
        if r == 1.0 or not isinstance(world, World) or world.beta is None:
            v = np.asarray(world.sample_valuations(x, rng), dtype=float)
            if p_max is not None:
                v = np.minimum(v, p_max)
            s = policy.expected_surplus(x, v)
            if r != 1.0:
                raise DomainError("Monte Carlo oracle for r != 1 needs a closed-form inner surplus")
        else:
            s = _power_floor(conditional_surplus(policy, x, world.index(x),
                                                 world.scenario.noise_width, p_max), r)
        vals[i:i + m] = s
    return OracleValue(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(draws)),
                       method, draws)


# ---------------------------------------------------------------- registry

_REGISTRY: dict[str, Scenario] = {}


def register(sc: Scenario) -> Scenario:
    _REGISTRY[sc.name] = sc
    return sc


def get_scenario(name: str) -> Scenario:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise DomainError(
            f"unknown scenario {name!r}; registered: {', '.join(sorted(_REGISTRY))}"
        ) from None


def list_scenarios() -> list[str]:
    return sorted(_REGISTRY)


register(Scenario(
    name="demand_misspec",
    description="quadratic valuation, linear demand model (wrong), tophat KDE propensity",
    d=1, features=("uniform", -0.5, 0.5), coef_range=(-0.1, 0.1),
    intercept=90.0, scale=3000.0, transform="square", noise_width=10.0,
    price_intervals=None, demand="linear", propensity="kde",
))
register(Scenario(
    name="propensity_misspec",
    description="linear valuation, linear demand model, Gaussian propensity (wrong)",
    d=1, features=("uniform", 0.0, 1.0), coef_range=(-1.0, 1.0),
    intercept=100.0, scale=300.0, transform="linear", noise_width=10.0,
    price_intervals=None, demand="linear", propensity="gaussian",
))
register(Scenario(
    name="convergence",
    description="linear valuation, both nuisances well specified",
    d=1, features=("uniform", 0.0, 1.0), coef_range=(-1.0, 1.0),
    intercept=100.0, scale=300.0, transform="linear", noise_width=10.0,
    price_intervals=None, demand="linear", propensity="kde",
    n_grid=(500, 1000, 2000, 4000, 8000),
))
register(Scenario(
    name="inequality_r05",
    description="inequality-aware surplus with r = 0.5, narrow noise, prices on [9, 12]",
    d=1, features=("uniform", 0.0, 1.0), coef_range=(-1.0, 1.0),
    intercept=100.0, scale=300.0, transform="linear", noise_width=1.0,
    price_intervals=((9.0, 12.0),), demand="linear", propensity="kde",
    estimators=("IA-DM", "IA-ACPW"), r=0.5,
))
register(Scenario(
    name="ci_coverage",
    description="confidence-interval coverage with boosted-tree demand, prices on [9, 11]",
    d=1, features=("uniform", 0.0, 1.0), coef_range=(-1.0, 1.0),
    intercept=10.0, scale=300.0, transform="linear", noise_width=1.0,
    price_intervals=((9.0, 11.0),), demand="boosted", propensity="kde",
    estimators=("DM", "CPW", "ACPW", "IA-DM", "IA-ACPW"), r=0.5,
    n_grid=(2000, 4000, 8000), reps=200,
))
register(Scenario(
    name="partial_id_gap",
    description="binary features, logged prices leave the gap (9.5, 10)",
    d=10, features=("bernoulli", 0.5), coef_range=(-1.0, 1.0),
    intercept=100.0, scale=300.0, transform="linear", noise_width=10.0,
    price_intervals=((9.0, 9.5), (10.0, 10.5)), demand="linear", propensity="kde",
    target=("grid", (9.1, 9.425, 9.75, 10.075, 10.4)),
    estimators=("LC-bounds", "naive-bounds", "oracle-bounds"), study="bounds",
    n_grid=(4000,), reps=50,
))
