"""Finite pricing instances whose surplus can be summed by hand.

Prices ``p_1 < ... < p_J`` are followed by ``p_max``. Demand is constant on
each cell ``[p_j, p_{j+1})`` and the logging policy puts mass ``q_j(x)`` on
``p_j``. Treating that mass as spread over the cell gives the logging density
``q_j(x) / (p_{j+1} - p_j)`` used by the weights, while the surplus of any
policy with atoms on the same prices is the finite double sum

``sum_x P(x) sum_j pi_j(x) sum_{k >= j} mu_k(x) (p_{k+1} - p_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.data import ObservationSet
from ..core.policies import DiscreteGrid
from ..core.quadrature import PriceGrid
from ..nuisance.demand import TableDemand
from ..nuisance.propensity import KnownPropensity


def _lookup(keys, x):
    x = np.asarray(x, dtype=float).reshape(-1, keys.shape[1])
    return np.all(x[:, None, :] == keys[None, :, :], axis=2).argmax(axis=1)


@dataclass(frozen=True)
class DiscreteInstance:
    """Finite joint law of ``(X, P, Y)`` with tabulated demand.

    Attributes
    ----------
    prices : (J,) strictly increasing candidate prices
    p_max : float above the last price
    keys : (K, d) distinct feature rows
    key_probs : (K,) probabilities of the feature rows
    logging : (K, J) logging masses per feature row
    demand : (K, J) purchase probabilities per feature row and price
    """

    prices: np.ndarray
    p_max: float
    keys: np.ndarray
    key_probs: np.ndarray
    logging: np.ndarray
    demand: np.ndarray

    @property
    def widths(self) -> np.ndarray:
        return np.diff(np.append(self.prices, self.p_max))

    def grid(self, size: int = 200) -> PriceGrid:
        return PriceGrid.uniform(self.prices[0], self.p_max, size).refine(self.prices)

    def demand_model(self) -> TableDemand:
        return TableDemand(self.prices, self.keys, self.demand)

    def policy(self, masses) -> DiscreteGrid:
        """Policy on ``prices`` with per-row masses ``masses`` of shape (K, J)."""
        m = np.asarray(masses, dtype=float)
        keys = self.keys
        return DiscreteGrid(self.prices, lambda x: m[_lookup(keys, x)])

    def logging_policy(self) -> DiscreteGrid:
        return self.policy(self.logging)

    def propensity_model(self, clip_floor: float = 1e-3) -> KnownPropensity:
        """Exact logging law: cell density ``q_j / width_j``, right-continuous CDF."""
        keys, prices, widths, q = self.keys, self.prices, self.widths, self.logging

        def col(p):
            return np.clip(np.searchsorted(prices, p, side="right") - 1, 0, prices.size - 1)

        def density(x, p):
            k = _lookup(keys, x)
            j = col(p)
            return q[k, j] / widths[j]

        def cdf(x, p):
            k = _lookup(keys, x)
            cum = np.cumsum(q, axis=1)[k]
            j = np.searchsorted(prices, p, side="right") - 1
            out = np.where(j >= 0, cum[np.arange(k.size), np.clip(j, 0, None)], 0.0)
            return out

        return KnownPropensity(density=density, cdf=cdf, clip_floor=clip_floor,
                               label="discrete-instance")

    def surplus(self, masses=None) -> float:
        """Double sum for a policy with masses (K, J); logging policy by default."""
        m = self.logging if masses is None else np.asarray(masses, dtype=float)
        tail = np.cumsum((self.demand * self.widths)[:, ::-1], axis=1)[:, ::-1]
        return float(np.sum(self.key_probs[:, None] * m * tail))

    def enumerate(self, copies: int) -> ObservationSet:
        """Rows whose empirical law equals the instance law exactly.

        Needs ``key_probs * logging * copies`` and ``demand`` times that count
        to be whole numbers.
        """
        xs, ps, ys = [], [], []
        for k in range(self.keys.shape[0]):
            for j in range(self.prices.size):
                cnt = self.key_probs[k] * self.logging[k, j] * copies
                buy = self.demand[k, j] * cnt
                if abs(cnt - round(cnt)) > 1e-9 or abs(buy - round(buy)) > 1e-9:
                    raise ValueError("instance probabilities are not multiples of 1/copies")
                cnt, buy = int(round(cnt)), int(round(buy))
                xs += [self.keys[k]] * cnt
                ps += [self.prices[j]] * cnt
                ys += [1.0] * buy + [0.0] * (cnt - buy)
        return ObservationSet(np.array(xs), np.array(ps), np.array(ys),
                              (float(self.prices[0]), float(self.p_max)))


def example_instance() -> DiscreteInstance:
    """Three prices, two customer types, uniform logging, demand in quarters."""
    return DiscreteInstance(
        prices=np.array([1.0, 2.0, 3.0]),
        p_max=4.0,
        keys=np.array([[0.0], [1.0]]),
        key_probs=np.array([0.5, 0.5]),
        logging=np.full((2, 3), 1.0 / 3.0),
        demand=np.array([[0.75, 0.5, 0.25], [1.0, 0.75, 0.5]]),
    )


def random_instance(rng, n_prices: int = 3, n_keys: int = 3) -> DiscreteInstance:
    """Random instance with strictly positive logging masses and monotone demand."""
    rng = np.random.default_rng(rng)
    prices = np.cumsum(rng.uniform(0.5, 2.0, n_prices)) + rng.uniform(0, 5)
    p_max = prices[-1] + rng.uniform(0.5, 2.0)
    keys = np.arange(n_keys, dtype=float).reshape(-1, 1)
    kp = rng.dirichlet(np.ones(n_keys))
    logging = rng.dirichlet(np.ones(n_prices), size=n_keys) * 0.9 + 0.1 / n_prices
    demand = np.sort(rng.random((n_keys, n_prices)), axis=1)[:, ::-1]
    return DiscreteInstance(prices, p_max, keys, kp, logging, demand)
