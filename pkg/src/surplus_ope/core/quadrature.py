"""Price grids and the one-dimensional integrals shared by all estimators.

Integrals over price use the composite midpoint rule on the cells of a
:class:`PriceGrid`. Step-shaped integrands with jumps at grid nodes (discrete
policies, tabulated demand) are then integrated exactly, and the discrete
analogue of exchanging the order of integration,
``sum_j pi_j * tail(p_j) == integral of F(z) mu(z)``, holds to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError

DEFAULT_NODES = 200


@dataclass(frozen=True)
class PriceGrid:
    """Strictly increasing price nodes; integrals use the cell midpoints.

    ``weights`` are the cell widths, so they sum to ``p_max - p_min``.
    """

    nodes: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.nodes, dtype=float).reshape(-1)
        if z.size < 2:
            raise DomainError("a price grid needs at least two nodes")
        if not np.all(np.isfinite(z)) or not np.all(np.diff(z) > 0):
            raise DomainError("grid nodes must be finite and strictly increasing")
        z = z.copy()
        z.setflags(write=False)
        object.__setattr__(self, "nodes", z)

    @classmethod
    def uniform(cls, p_min: float, p_max: float, size: int = DEFAULT_NODES) -> PriceGrid:
        if size < 2:
            raise DomainError("a price grid needs at least two nodes")
        z = np.linspace(p_min, p_max, size)
        z[-1] = p_max
        return cls(z)

    @classmethod
    def for_support(cls, support, size: int = DEFAULT_NODES, extra=()) -> PriceGrid:
        return cls.uniform(support[0], support[1], size).refine(extra)

    @property
    def p_min(self) -> float:
        return float(self.nodes[0])

    @property
    def p_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def weights(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    @property
    def cells(self) -> int:
        return self.nodes.size - 1

    def refine(self, points) -> PriceGrid:
        """Insert ``points`` lying inside the grid span as nodes.

        Existing nodes closer than ``1e-9`` of the span to a new point are
        replaced by it, so inserted breakpoints are represented exactly.
        """
        pts = np.unique(np.asarray(points, dtype=float).reshape(-1))
        tol = 1e-9 * (self.p_max - self.p_min)
        pts = pts[(pts >= self.p_min - tol) & (pts <= self.p_max + tol)]
        if pts.size == 0:
            return self
        pts = np.clip(pts, self.p_min, self.p_max)
        keep = np.ones(self.nodes.size, dtype=bool)
        idx = np.searchsorted(pts, self.nodes)
        for side in (idx - 1, idx):
            ok = (side >= 0) & (side < pts.size)
            close = np.zeros_like(keep)
            close[ok] = np.abs(pts[side[ok]] - self.nodes[ok]) <= tol
            keep &= ~close
        merged = np.union1d(self.nodes[keep], pts)
        if merged.size == self.nodes.size and np.array_equal(merged, self.nodes):
            return self
        return PriceGrid(merged)

    def check_price(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        tol = 1e-9 * max(1.0, abs(self.p_max))
        if np.any(p < self.p_min - tol) or np.any(p > self.p_max + tol):
            raise DomainError(
                f"price outside the integration window [{self.p_min}, {self.p_max}]"
            )
        return np.clip(p, self.p_min, self.p_max)


def clamp_unit(values) -> np.ndarray:
    return np.clip(values, 0.0, 1.0)


def integrate_cells(values: np.ndarray, grid: PriceGrid) -> np.ndarray:
    """Midpoint-rule integral of per-cell values (last axis) over the grid."""
    return values @ grid.weights


def tail_integrals(demand, features, prices, grid: PriceGrid, mu_cells=None) -> np.ndarray:
    """``int_{P_i}^{p_max} clamp(mu(X_i, z)) dz`` for each row.

    Parameters
    ----------
    demand : DemandModel
    features : ndarray of shape (n, d)
    prices : ndarray of shape (n,)
    grid : PriceGrid
    mu_cells : ndarray of shape (n, cells), optional
        Clamped demand at the cell midpoints, if already computed.

    Returns
    -------
    ndarray of shape (n,)
        Each value lies in ``[0, p_max - P_i]``.
    """
    p = grid.check_price(np.asarray(prices, dtype=float).reshape(-1))
    x = np.asarray(features, dtype=float).reshape(p.size, -1)
    if mu_cells is None:
        mu_cells = clamp_unit(demand.predict_grid(x, grid.midpoints))
    w = grid.weights
    # suffix[:, c] = integral over cells c, c+1, ...
    contrib = mu_cells * w
    suffix = np.zeros((p.size, grid.cells + 1))
    suffix[:, :-1] = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1]
    cell = np.clip(np.searchsorted(grid.nodes, p, side="right") - 1, 0, grid.cells - 1)
    right = grid.nodes[cell + 1]
    partial = right - p
    rows = np.arange(p.size)
    out = suffix[rows, cell + 1]
    has_partial = partial > 0
    if np.any(has_partial):
        on_node = np.isclose(p, grid.nodes[cell], rtol=0, atol=1e-12 * max(1.0, grid.p_max))
        exact_cell = has_partial & on_node
        out = out + np.where(exact_cell, contrib[rows, cell], 0.0)
        split = has_partial & ~on_node
        if np.any(split):
            # a price strictly inside a cell: midpoint of the partial cell
            mid = 0.5 * (p[split] + right[split])
            mu_mid = clamp_unit(demand.predict(x[split], mid))
            out[split] += mu_mid * partial[split]
    return out


def policy_surplus_integrals(demand, policy, features, grid: PriceGrid, mu_cells=None):
    """``int F^pi(z|X_i) clamp(mu(X_i, z)) dz`` for each row.

    The grid should already contain the policy breakpoints; see
    :meth:`PriceGrid.refine`.
    """
    x = np.asarray(features, dtype=float)
    if mu_cells is None:
        mu_cells = clamp_unit(demand.predict_grid(x, grid.midpoints))
    cdf = policy.cdf_grid(x, grid.midpoints)
    return integrate_cells(cdf * mu_cells, grid)


def _row(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(1, -1)


def tail_integral(demand, x, p, grid: PriceGrid) -> float:
    """``int_p^{p_max} clamp(mu(x, z)) dz`` for a single feature row."""
    return float(tail_integrals(demand, _row(x), np.array([p], dtype=float), grid)[0])


def policy_surplus_integral(demand, policy, x, grid: PriceGrid) -> float:
    """``int F^pi(z|x) clamp(mu(x, z)) dz`` for a single feature row."""
    grid = grid.refine(policy.breakpoints())
    return float(policy_surplus_integrals(demand, policy, _row(x), grid)[0])
