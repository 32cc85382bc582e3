"""Surplus bounds when some target prices were never logged.

Inside the logged price range demand is estimated directly. In gaps without
logged prices, demand that is nonincreasing and log-concave in price is
bracketed by two envelopes built from the nearest logged prices:

* lower: geometric interpolation between the bracketing logged prices;
* upper: the smaller of the log-linear extrapolations from the two logged
  prices on each side.

Sentinels stand in for missing neighbours: price 0 with demand 1 on the left
and ``v_max`` (the price at which nobody buys) with demand 0 on the right.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core.data import SUPPORT_PAD
from .core.quadrature import PriceGrid, clamp_unit, integrate_cells
from .errors import DegenerateDataError, DomainError
from .estimators import fsum_mean

ANCHOR_FLOOR = 1e-6


def _log(mu):
    with np.errstate(divide="ignore"):
        return np.log(mu)


def lower_envelope(mu1, mu2, z, z1, z2, monotone: bool = False):
    """Geometric interpolation ``mu1^t * mu2^(1-t)`` with ``t = (z2 - z)/(z2 - z1)``.

    Requires ``z1 < z2`` and ``z`` in ``[z1, z2]``. A zero at ``z2`` gives 0 on
    ``(z1, z2]``. With ``monotone=True`` the result is also raised to at least
    ``mu2``, which any nonincreasing demand satisfies on ``[z1, z2]``.
    """
    mu1, mu2, z, z1, z2 = (np.asarray(a, dtype=float) for a in (mu1, mu2, z, z1, z2))
    if np.any(z2 <= z1):
        raise DomainError("lower envelope needs z1 < z2")
    if np.any(z < z1) or np.any(z > z2):
        raise DomainError("query price must lie between the two anchors")
    if np.any(mu1 < 0) or np.any(mu1 > 1) or np.any(mu2 < 0) or np.any(mu2 > 1):
        raise DomainError("anchor demand values must lie in [0, 1]")
    t = (z2 - z) / (z2 - z1)
    # t * log(mu1) + (1 - t) * log(mu2) with 0 * log(0) read as 0
    with np.errstate(invalid="ignore"):
        a = np.where(t > 0, t * _log(mu1), 0.0)
        b = np.where(t < 1, (1 - t) * _log(mu2), 0.0)
    out = np.exp(a + b)
    if monotone:
        out = np.maximum(out, mu2)
    out = clamp_unit(out)
    return float(out) if out.ndim == 0 else out


def _extrapolate(z, za, zb, mua, mub, toward_right):
    """Log-linear line through ``(za, mua)`` and ``(zb, mub)`` evaluated at ``z``.

    ``toward_right`` extrapolates beyond ``zb`` (the right point of the pair);
    otherwise below ``za``.
    """
    la, lb = _log(mua), _log(mub)
    with np.errstate(invalid="ignore", divide="ignore"):
        slope = (lb - la) / (zb - za)
        if toward_right:
            dz = z - zb
            out = np.where(dz == 0, lb, lb + dz * slope)
        else:
            dz = za - z
            out = np.where(dz == 0, la, la - dz * slope)
    return np.where(np.isnan(out), np.inf, out)


def upper_envelope(z, nodes, mus):
    """Upper demand envelope at ``z`` from up to four neighbouring anchors.

    Parameters
    ----------
    z : float or ndarray
    nodes : sequence of four prices ``(z1, z2, z3, z4)``
        ``z1 <= z2 <= z <= z3 <= z4``; ``z1`` and ``z4`` may be ``None``/NaN
        for a missing second neighbour. ``z2`` and ``z3`` must be present.
    mus : sequence of four demand values at those prices (ignored where NA).

    Returns
    -------
    float or ndarray in [0, 1]
        Both outer nodes present: ``min(e^u1, e^u2)``; only ``z1``:
        ``min(e^u1, mu(z2))``; only ``z4``: ``min(e^u2, mu(z2))``; neither: 1.
    """
    def arr(v):
        return np.nan if v is None else np.asarray(v, dtype=float)

    z, z1, z2, z3, z4, m1, m2, m3, m4 = np.broadcast_arrays(
        np.asarray(z, dtype=float), *(arr(v) for v in nodes), *(arr(v) for v in mus)
    )
    if np.any(np.isnan(z2)) or np.any(np.isnan(z3)):
        raise DomainError("upper envelope needs both inner anchors z2 and z3")
    has1, has4 = ~np.isnan(z1), ~np.isnan(z4)
    if np.any(z2 > z) or np.any(z > z3):
        raise DomainError("query price must lie between the inner anchors")
    if np.any(has1 & (z1 >= z2)) or np.any(has4 & (z4 <= z3)):
        raise DomainError("outer anchors must be strictly outside the inner ones")
    for vals, need in ((m2, None), (m3, has4), (m1, has1), (m4, has4)):
        sel = np.ones(z.shape, bool) if need is None else need
        if np.any(np.isnan(vals[sel])) or np.any(vals[sel] < 0) or np.any(vals[sel] > 1):
            raise DomainError("anchor demand values must lie in [0, 1]")
    u1 = np.where(has1, _extrapolate(z, np.where(has1, z1, 0), z2, np.where(has1, m1, 1), m2, True),
                  np.inf)
    u2 = np.where(has4, _extrapolate(z, z3, np.where(has4, z4, 1), m3, np.where(has4, m4, 1), False),
                  np.inf)
    cap = np.where(has1 & has4, np.inf, m2)
    with np.errstate(over="ignore"):  # e^u above 1 is clamped anyway
        out = np.minimum(np.minimum(np.exp(u1), np.exp(u2)), cap)
    out = np.where(~has1 & ~has4, 1.0, out)
    out = clamp_unit(out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class OverlapMap:
    """Which prices were logged, with the sorted anchor prices used for envelopes.

    A price counts as covered when a logged price lies within ``half_width``
    of it, or, when ``support`` intervals are given, when it lies inside one.
    Coverage does not depend on features.
    """

    anchors: np.ndarray
    v_max: float
    half_width: float | None = None
    support: tuple | None = None

    def __post_init__(self):
        a = np.unique(np.asarray(self.anchors, dtype=float).reshape(-1))
        if a.size == 0:
            raise DegenerateDataError("no logged prices to anchor the envelopes")
        if not self.v_max > a[-1] - 1e-12:
            raise DomainError(f"v_max {self.v_max} is below the largest logged price {a[-1]}")
        if self.support is not None:
            iv = np.asarray(self.support, dtype=float).reshape(-1, 2)
            if iv.shape[0] == 0 or np.any(iv[:, 1] <= iv[:, 0]) or np.any(iv[1:, 0] < iv[:-1, 1]):
                raise DomainError("support intervals must be nonempty, sorted and disjoint")
            object.__setattr__(self, "support", tuple(map(tuple, iv.tolist())))
        a.setflags(write=False)
        object.__setattr__(self, "anchors", a)

    @classmethod
    def from_prices(cls, prices, v_max=None, half_width=None, support=None) -> OverlapMap:
        p = np.asarray(prices, dtype=float)
        if v_max is None:
            v_max = SUPPORT_PAD * float(p.max())
        return cls(p, float(v_max), half_width, support)

    def covered(self, z, half_width=None) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.support is not None:
            iv = np.asarray(self.support)
            return np.any((z[..., None] >= iv[:, 0]) & (z[..., None] <= iv[:, 1]), axis=-1)
        hw = self.half_width if half_width is None else half_width
        if hw is None:
            raise DomainError("coverage rule needs a half width or support intervals")
        a = self.anchors
        i = np.searchsorted(a, z)
        left = np.abs(z - a[np.clip(i - 1, 0, a.size - 1)])
        right = np.abs(a[np.clip(i, 0, a.size - 1)] - z)
        return np.minimum(left, right) <= hw

    def neighbours(self, z):
        """Anchor prices ``(z1, z2, z3, z4)`` around each query with sentinels.

        Missing outer neighbours are NaN; sentinel prices are 0 (left) and
        ``v_max`` (right). Also returns the matching anchor demand overrides:
        1 at the left sentinel, 0 at the right one, NaN for real anchors.
        """
        z = np.asarray(z, dtype=float).reshape(-1)
        a = self.anchors
        k = a.size
        nl = np.searchsorted(a, z, side="right")  # anchors <= z
        nr = k - np.searchsorted(a, z, side="left")  # anchors >= z
        nan = np.full(z.size, np.nan)
        z1, z2, z3, z4 = nan.copy(), nan.copy(), nan.copy(), nan.copy()
        o1, o2, o3, o4 = nan.copy(), nan.copy(), nan.copy(), nan.copy()
        # left side
        none = nl == 0
        one = nl == 1
        many = nl >= 2
        z2[none], o2[none] = 0.0, 1.0
        z1[one], o1[one] = 0.0, 1.0
        z2[one] = a[0]
        z2[many] = a[nl[many] - 1]
        z1[many] = a[nl[many] - 2]
        # right side
        first = k - nr
        none = nr == 0
        one = nr == 1
        many = nr >= 2
        z3[none], o3[none] = self.v_max, 0.0
        z3[one] = a[-1]
        z4[one], o4[one] = self.v_max, 0.0
        z3[many] = a[first[many]]
        z4[many] = a[first[many] + 1]
        return (z1, z2, z3, z4), (o1, o2, o3, o4)


@dataclass(frozen=True)
class BoundEstimate:
    """Surplus bounds with per-node traces averaged over observations."""

    lower: float
    upper: float
    naive_lower: float
    naive_upper: float
    nodes: np.ndarray
    covered: np.ndarray
    lower_trace: np.ndarray
    upper_trace: np.ndarray
    v_max: float
    n: int
    meta: dict = field(default_factory=dict)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @property
    def naive_length(self) -> float:
        return self.naive_upper - self.naive_lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "naive_lower": self.naive_lower,
            "naive_upper": self.naive_upper,
            "v_max": self.v_max,
            "n": self.n,
            "nodes": self.nodes.tolist(),
            "covered": self.covered.astype(int).tolist(),
            "lower_envelope": self.lower_trace.tolist(),
            "upper_envelope": self.upper_trace.tolist(),
            **self.meta,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def estimate_bounds(data, demand, policy, overlap: OverlapMap | None = None,
                    grid: PriceGrid | None = None, *, v_max=None, monotone_lower=False,
                    grid_size: int = 200) -> BoundEstimate:
    """Lower and upper surplus bounds for ``policy``.

    The integrand ``F^pi(z|X_i) * m(X_i, z)`` uses ``m = mu_hat`` at covered
    prices and an envelope elsewhere. Naive bounds put 0 and 1 in the gaps.

    Parameters
    ----------
    data : ObservationSet
    demand : DemandModel
        Fitted on the logged (covered) prices.
    policy : PricingPolicy
    overlap : OverlapMap, optional
        Defaults to the logged prices with ``v_max``.
    grid : PriceGrid, optional
        Defaults to ``grid_size`` nodes from the smallest relevant price to
        ``v_max``, refined with the policy breakpoints.
    v_max : float, optional
        Defaults to ``overlap.v_max`` or 1.05 times the largest logged price.
    """
    if overlap is None:
        overlap = OverlapMap.from_prices(data.prices, v_max)
    v_max = overlap.v_max
    if grid is None:
        lo = min(float(data.prices.min()), policy.support()[0])
        grid = PriceGrid.uniform(lo, v_max, grid_size)
    grid = grid.refine(policy.breakpoints())
    mids = grid.midpoints
    hw = overlap.half_width
    if hw is None:
        hw = 0.5 * (grid.p_max - grid.p_min) / grid.cells
    covered = overlap.covered(mids, hw)
    if not covered.any():
        raise DegenerateDataError("no grid price is covered by logged data")
    x = data.features
    cdf = policy.cdf_grid(x, mids)
    mu = clamp_unit(demand.predict_grid(x, mids))
    gap = np.flatnonzero(~covered)
    low_vals = np.where(covered, mu, 0.0)
    up_vals = np.where(covered, mu, 1.0)
    naive_lo = fsum_mean(integrate_cells(cdf * low_vals, grid))
    naive_hi = fsum_mean(integrate_cells(cdf * up_vals, grid))
    if gap.size:
        zg = mids[gap]
        (z1, z2, z3, z4), (o1, o2, o3, o4) = overlap.neighbours(zg)
        real = np.unique(np.concatenate([v[np.isnan(o)] for v, o in
                                         ((z1, o1), (z2, o2), (z3, o3), (z4, o4))]))
        real = real[~np.isnan(real)]
        anchor_mu = np.maximum(clamp_unit(demand.predict_grid(x, real)), ANCHOR_FLOOR)

        def at(zk, ok):
            out = np.empty((x.shape[0], zk.size))
            fixed = ~np.isnan(ok)
            out[:, fixed] = ok[fixed]
            missing = np.isnan(zk) & ~fixed
            out[:, missing] = np.nan
            live = ~fixed & ~missing
            out[:, live] = anchor_mu[:, np.searchsorted(real, zk[live])]
            return out

        m1, m2, m3, m4 = at(z1, o1), at(z2, o2), at(z3, o3), at(z4, o4)
        # the lower envelope interpolates between the inner anchors z2 <= z <= z3
        f_lo = lower_envelope(m2, m3, zg, z2, z3, monotone=monotone_lower)
        f_up = upper_envelope(zg, (z1, z2, z3, z4), (m1, m2, m3, m4))
        low_vals = low_vals.copy()
        up_vals = up_vals.copy()
        low_vals[:, gap] = f_lo
        up_vals[:, gap] = f_up
    lower = fsum_mean(integrate_cells(cdf * low_vals, grid))
    upper = fsum_mean(integrate_cells(cdf * up_vals, grid))
    return BoundEstimate(lower, upper, naive_lo, naive_hi, mids, covered,
                         low_vals.mean(axis=0), up_vals.mean(axis=0), v_max, data.n)
