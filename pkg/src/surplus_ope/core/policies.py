"""Pricing policies: conditional price distributions with analytic CDFs."""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from ..errors import DomainError

PROB_TOL = 1e-8


def _nrows(features) -> int:
    x = np.asarray(features)
    return x.shape[0] if x.ndim >= 1 else 1


class PricingPolicy(ABC):
    """A conditional distribution of prices given customer features."""

    kind: str = "policy"

    @abstractmethod
    def breakpoints(self) -> np.ndarray:
        """Prices where the CDF has a jump or a kink."""

    @abstractmethod
    def support(self) -> tuple[float, float]:
        """Smallest closed interval holding all probability mass."""

    @abstractmethod
    def cdf_grid(self, features, prices) -> np.ndarray:
        """``F(z_k | X_i)`` as an ``(n, m)`` matrix."""

    @abstractmethod
    def cdf_at(self, features, prices) -> np.ndarray:
        """``F(P_i | X_i)`` row by row."""

    @abstractmethod
    def sample(self, features, rng: np.random.Generator) -> np.ndarray:
        """One price per row of ``features``."""

    @abstractmethod
    def expected_surplus(self, features, valuations) -> np.ndarray:
        """``int pi(p | X_i) (v_i - p)_+ dp`` row by row."""

    @abstractmethod
    def to_dict(self) -> dict:
        """JSON-ready description."""


class DiscretePolicy(PricingPolicy):
    """Finitely many candidate prices with context-dependent masses."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1)
        if pts.size == 0:
            raise DomainError("a discrete policy needs at least one price")
        if not np.all(np.isfinite(pts)) or not np.all(np.diff(pts) > 0):
            raise DomainError("discrete policy prices must be finite and strictly increasing")
        pts.setflags(write=False)
        self.points = pts

    @abstractmethod
    def probs(self, features) -> np.ndarray:
        """Masses on ``points`` as an ``(n, J)`` matrix."""

    def breakpoints(self):
        return self.points

    def support(self):
        return float(self.points[0]), float(self.points[-1])

    def cdf_grid(self, features, prices):
        z = np.asarray(prices, dtype=float).reshape(-1)
        below = (self.points[:, None] <= z[None, :]).astype(float)
        return self.probs(features) @ below

    def cdf_at(self, features, prices):
        p = np.asarray(prices, dtype=float).reshape(-1)
        w = self.probs(features)
        return np.sum(w * (self.points[None, :] <= p[:, None]), axis=1)

    def sample(self, features, rng):
        w = self.probs(features)
        u = rng.random(w.shape[0])
        idx = (np.cumsum(w, axis=1) < u[:, None]).sum(axis=1)
        return self.points[np.minimum(idx, self.points.size - 1)]

    def expected_surplus(self, features, valuations):
        v = np.asarray(valuations, dtype=float).reshape(-1)
        gain = np.maximum(v[:, None] - self.points[None, :], 0.0)
        return np.sum(self.probs(features) * gain, axis=1)


class DiscreteGrid(DiscretePolicy):
    """Prices ``points`` with masses ``probs``.

    ``probs`` is either a fixed vector or a callable mapping an ``(n, d)``
    feature matrix to an ``(n, J)`` matrix of masses.
    """

    kind = "discrete"

    def __init__(self, points, probs=None):
        super().__init__(points)
        if probs is None:
            probs = np.full(self.points.size, 1.0 / self.points.size)
        if callable(probs):
            self._fn = probs
            self._fixed = None
        else:
            w = np.asarray(probs, dtype=float).reshape(-1)
            if w.shape != self.points.shape:
                raise DomainError("one probability per price is required")
            _check_masses(w[None, :])
            w.setflags(write=False)
            self._fixed = w
            self._fn = None

    def probs(self, features):
        n = _nrows(features)
        if self._fixed is not None:
            return np.broadcast_to(self._fixed, (n, self.points.size))
        w = np.asarray(self._fn(np.asarray(features, dtype=float)), dtype=float)
        if w.shape != (n, self.points.size):
            raise DomainError(f"probability function returned shape {w.shape}")
        _check_masses(w)
        return w

    def to_dict(self):
        out = {"type": self.kind, "points": self.points.tolist()}
        if self._fixed is not None:
            out["probs"] = self._fixed.tolist()
        else:
            out["probs"] = "context-dependent"
        return out


def _check_masses(w):
    if np.any(w < -PROB_TOL) or not np.all(np.isfinite(w)):
        raise DomainError("policy masses must be finite and nonnegative")
    if np.any(np.abs(w.sum(axis=1) - 1.0) > PROB_TOL):
        raise DomainError("policy masses must sum to one")


class SoftmaxRevenue(DiscretePolicy):
    """Softmax over expected revenue: ``pi_j(x) ~ exp(gamma * p_j * d(x, p_j))``.

    ``d`` is a fitted demand model, clamped to ``[0, 1]``. ``gamma = 0`` gives
    the uniform distribution over ``points``.
    """

    kind = "softmax"

    def __init__(self, demand, points, temperature: float = 1.0):
        super().__init__(points)
        if not np.isfinite(temperature) or temperature < 0:
            raise DomainError("softmax temperature must be finite and nonnegative")
        self.demand = demand
        self.temperature = float(temperature)

    def probs(self, features):
        x = np.asarray(features, dtype=float)
        n = x.shape[0]
        if self.temperature == 0:
            return np.full((n, self.points.size), 1.0 / self.points.size)
        d = np.clip(self.demand.predict_grid(x, self.points), 0.0, 1.0)
        s = self.temperature * self.points[None, :] * d
        s -= s.max(axis=1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=1, keepdims=True)

    def to_dict(self):
        return {
            "type": self.kind,
            "points": self.points.tolist(),
            "temperature": self.temperature,
            "demand": self.demand.to_dict(),
        }


class PiecewiseUniform(PricingPolicy):
    """Mixture of uniform distributions on disjoint intervals, independent of x."""

    kind = "piecewise_uniform"

    def __init__(self, intervals, masses=None):
        iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
        if iv.shape[0] == 0:
            raise DomainError("at least one interval is required")
        if not np.all(np.isfinite(iv)) or np.any(iv[:, 1] <= iv[:, 0]):
            raise DomainError("each interval needs finite endpoints with low < high")
        if np.any(iv[1:, 0] < iv[:-1, 1]):
            raise DomainError("intervals must be sorted and non-overlapping")
        if masses is None:
            masses = (iv[:, 1] - iv[:, 0]) / np.sum(iv[:, 1] - iv[:, 0])
        m = np.asarray(masses, dtype=float).reshape(-1)
        if m.shape[0] != iv.shape[0]:
            raise DomainError("one mass per interval is required")
        _check_masses(m[None, :])
        iv.setflags(write=False)
        m.setflags(write=False)
        self.intervals = iv
        self.masses = m

    def breakpoints(self):
        return np.unique(self.intervals.reshape(-1))

    def support(self):
        return float(self.intervals[0, 0]), float(self.intervals[-1, 1])

    def _cdf(self, p):
        lo, hi = self.intervals[:, 0], self.intervals[:, 1]
        frac = np.clip((p[..., None] - lo) / (hi - lo), 0.0, 1.0)
        return frac @ self.masses

    def density(self, prices) -> np.ndarray:
        p = np.asarray(prices, dtype=float)
        lo, hi = self.intervals[:, 0], self.intervals[:, 1]
        inside = (p[..., None] >= lo) & (p[..., None] <= hi)
        return inside @ (self.masses / (hi - lo))

    def cdf_grid(self, features, prices):
        z = np.asarray(prices, dtype=float).reshape(-1)
        return np.broadcast_to(self._cdf(z), (_nrows(features), z.size))

    def cdf_at(self, features, prices):
        return self._cdf(np.asarray(prices, dtype=float).reshape(-1))

    def sample(self, features, rng):
        n = _nrows(features)
        k = rng.choice(self.masses.size, size=n, p=self.masses)
        lo, hi = self.intervals[k, 0], self.intervals[k, 1]
        return lo + (hi - lo) * rng.random(n)

    def expected_surplus(self, features, valuations):
        v = np.asarray(valuations, dtype=float).reshape(-1)
        lo, hi = self.intervals[:, 0], self.intervals[:, 1]
        # int_lo^hi (v - p)_+ dp = ((v - lo)_+^2 - (v - hi)_+^2) / 2
        a = np.maximum(v[:, None] - lo, 0.0) ** 2
        b = np.maximum(v[:, None] - hi, 0.0) ** 2
        return ((a - b) / (2.0 * (hi - lo))) @ self.masses

    def to_dict(self):
        return {
            "type": self.kind,
            "intervals": self.intervals.tolist(),
            "masses": self.masses.tolist(),
        }


class UniformInterval(PiecewiseUniform):
    """Uniform prices on ``[a, b]``."""

    kind = "uniform"

    def __init__(self, a: float, b: float):
        super().__init__([[a, b]])
        self.a = float(a)
        self.b = float(b)

    def to_dict(self):
        return {"type": self.kind, "a": self.a, "b": self.b}


def policy_cdf(policy: PricingPolicy, p: float, x=()) -> float:
    """``F^pi(p | x)`` for one feature row."""
    row = np.asarray(x, dtype=float).reshape(1, -1)
    return float(policy.cdf_at(row, np.array([p], dtype=float))[0])


def sample_policy(policy: PricingPolicy, x=(), rng_seed=None) -> float:
    """Draw one price from ``pi(. | x)``; deterministic for a given seed."""
    row = np.asarray(x, dtype=float).reshape(1, -1)
    return float(policy.sample(row, np.random.default_rng(rng_seed))[0])


def policy_from_dict(spec: dict, demand=None) -> PricingPolicy:
    """Rebuild a policy from :meth:`PricingPolicy.to_dict` output.

    Softmax policies need a demand model, taken from ``demand`` or from an
    embedded ``"demand"`` entry.
    """
    kind = spec.get("type")
    if kind == "uniform":
        return UniformInterval(spec["a"], spec["b"])
    if kind == "piecewise_uniform":
        return PiecewiseUniform(spec["intervals"], spec.get("masses"))
    if kind == "discrete":
        probs = spec.get("probs")
        if isinstance(probs, str):
            raise DomainError("context-dependent discrete policies cannot be rebuilt from JSON")
        return DiscreteGrid(spec["points"], probs)
    if kind == "softmax":
        if demand is None:
            if "demand" not in spec:
                raise DomainError("softmax policy needs a demand model")
            from ..nuisance.demand import demand_from_dict

            demand = demand_from_dict(spec["demand"])
        return SoftmaxRevenue(demand, spec["points"], spec.get("temperature", 1.0))
    raise DomainError(f"unknown policy type {kind!r}")
