"""Logging-policy models: density ``pi_D(p|x)`` and cumulative ``F^{pi_D}(p|x)``.

Densities are clipped below at ``clip_floor`` so inverse weights stay bounded
by ``1 / clip_floor``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ..errors import DegenerateDataError, DomainError, SchemaError
from .demand import SCHEMA_VERSION

CLIP_FLOOR = 1e-3
_SQRT_2PI = np.sqrt(2.0 * np.pi)


class PropensityModel(ABC):
    learner: str = "propensity"

    def __init__(self, clip_floor: float = CLIP_FLOOR):
        if not clip_floor > 0:
            raise DomainError("clip floor must be positive")
        self.clip_floor = float(clip_floor)

    @abstractmethod
    def raw_density(self, features, prices) -> np.ndarray:
        """Unclipped density at paired rows."""

    @abstractmethod
    def cdf_at(self, features, prices) -> np.ndarray:
        """Cumulative at paired rows."""

    def cdf_grid(self, features, prices) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        z = np.asarray(prices, dtype=float).reshape(-1)
        n, m = x.shape[0], z.size
        return self.cdf_at(np.repeat(x, m, axis=0), np.tile(z, n)).reshape(n, m)

    def density(self, features, prices) -> np.ndarray:
        return np.maximum(self.raw_density(features, prices), self.clip_floor)

    @abstractmethod
    def to_dict(self) -> dict:
        """Versioned JSON-ready description."""

    def _header(self):
        return {"schema_version": SCHEMA_VERSION, "learner": self.learner,
                "clip_floor": self.clip_floor}


class KnownPropensity(PropensityModel):
    """Exact logging law, from a policy or from ``density(X, p)``/``cdf(X, p)`` callables."""

    learner = "known"

    def __init__(self, policy=None, density=None, cdf=None, clip_floor=CLIP_FLOOR, label=None):
        super().__init__(clip_floor)
        if policy is not None:
            density = density or (lambda x, p: policy.density(p))
            cdf = cdf or policy.cdf_at
            self._grid = policy.cdf_grid
            label = label or policy.to_dict()
        else:
            if density is None or cdf is None:
                raise DomainError("known propensity needs a policy or both callables")
            self._grid = None
        self._density = density
        self._cdf = cdf
        self.label = label or "closure"

    def raw_density(self, features, prices):
        p = np.asarray(prices, dtype=float).reshape(-1)
        return np.asarray(self._density(features, p), dtype=float).reshape(-1) * np.ones(p.size)

    def cdf_at(self, features, prices):
        p = np.asarray(prices, dtype=float).reshape(-1)
        return np.asarray(self._cdf(features, p), dtype=float).reshape(-1) * np.ones(p.size)

    def cdf_grid(self, features, prices):
        if self._grid is not None:
            return self._grid(features, prices)
        return super().cdf_grid(features, prices)

    def to_dict(self):
        return {**self._header(), "law": self.label}


class EmpiricalCDF:
    """Right-continuous empirical distribution function of a price sample."""

    def __init__(self, sample):
        s = np.sort(np.asarray(sample, dtype=float).reshape(-1))
        if s.size == 0:
            raise DegenerateDataError("empirical CDF of an empty sample")
        self.sample = s

    def __call__(self, prices):
        p = np.asarray(prices, dtype=float)
        return np.searchsorted(self.sample, p, side="right") / self.sample.size


def silverman_bandwidth(sample) -> float:
    s = np.asarray(sample, dtype=float)
    return 1.06 * float(np.std(s, ddof=1)) * s.size ** (-0.2)


class KDEPropensity(PropensityModel):
    """Marginal kernel density of prices with reflection at the sample range.

    Evaluation points outside ``[lower, upper]`` are moved to the nearest
    boundary before the density is computed. The cumulative is the empirical
    CDF of the same sample.
    """

    learner = "kde"

    def __init__(self, sample, kernel="tophat", bandwidth=None, clip_floor=CLIP_FLOOR,
                 lower=None, upper=None, reflect=True):
        super().__init__(clip_floor)
        s = np.sort(np.asarray(sample, dtype=float).reshape(-1))
        if kernel not in ("tophat", "gaussian"):
            raise DomainError(f"unknown kernel {kernel!r}")
        self.sample = s
        self.kernel = kernel
        self.bandwidth = float(silverman_bandwidth(s) if bandwidth is None else bandwidth)
        if not self.bandwidth > 0:
            raise DomainError("bandwidth must be positive")
        self.lower = float(s[0] if lower is None else lower)
        self.upper = float(s[-1] if upper is None else upper)
        self.reflect = bool(reflect)
        self.ecdf = EmpiricalCDF(s)
        copies = [s]
        if reflect:
            copies += [np.sort(2 * self.lower - s), np.sort(2 * self.upper - s)]
        self._points = np.sort(np.concatenate(copies))

    def _kernel_sum(self, q):
        h = self.bandwidth
        pts = self._points
        if self.kernel == "tophat":
            hi = np.searchsorted(pts, q + h, side="right")
            lo = np.searchsorted(pts, q - h, side="left")
            return (hi - lo) / (2.0 * h)
        out = np.empty(q.size)
        step = max(1, 2_000_000 // max(pts.size, 1))
        for i in range(0, q.size, step):
            u = (q[i:i + step, None] - pts[None, :]) / h
            out[i:i + step] = np.exp(-0.5 * u * u).sum(axis=1) / (_SQRT_2PI * h)
        return out

    def raw_density(self, features, prices):
        q = np.clip(np.asarray(prices, dtype=float).reshape(-1), self.lower, self.upper)
        return self._kernel_sum(q) / self.sample.size

    def cdf_at(self, features, prices):
        return self.ecdf(np.asarray(prices, dtype=float).reshape(-1))

    def cdf_grid(self, features, prices):
        z = np.asarray(prices, dtype=float).reshape(-1)
        n = np.asarray(features).shape[0]
        return np.broadcast_to(self.ecdf(z), (n, z.size))

    def to_dict(self):
        return {
            **self._header(),
            "kernel": self.kernel,
            "bandwidth": self.bandwidth,
            "lower": self.lower,
            "upper": self.upper,
            "reflect": self.reflect,
            "n": int(self.sample.size),
            "sample": self.sample.tolist(),
        }


class GaussianPropensity(PropensityModel):
    """Normal price density with moment-matched mean and standard deviation."""

    learner = "gaussian"

    def __init__(self, mean: float, sd: float, clip_floor=CLIP_FLOOR):
        super().__init__(clip_floor)
        if not sd > 0:
            raise DomainError("standard deviation must be positive")
        self.mean = float(mean)
        self.sd = float(sd)

    def raw_density(self, features, prices):
        u = (np.asarray(prices, dtype=float).reshape(-1) - self.mean) / self.sd
        return np.exp(-0.5 * u * u) / (_SQRT_2PI * self.sd)

    def cdf_at(self, features, prices):
        return ndtr((np.asarray(prices, dtype=float).reshape(-1) - self.mean) / self.sd)

    def cdf_grid(self, features, prices):
        z = np.asarray(prices, dtype=float).reshape(-1)
        n = np.asarray(features).shape[0]
        return np.broadcast_to(ndtr((z - self.mean) / self.sd), (n, z.size))

    def to_dict(self):
        return {**self._header(), "mean": self.mean, "sd": self.sd}


class BinnedKDEPropensity(PropensityModel):
    """Price KDE conditional on quantile bins of one feature column.

    Bins with fewer than ``min_count`` rows fall back to the marginal KDE.
    """

    learner = "binned_kde"

    def __init__(self, feature: int, edges, models, fallback, clip_floor=CLIP_FLOOR):
        super().__init__(clip_floor)
        self.feature = int(feature)
        self.edges = np.asarray(edges, dtype=float)
        self.models = list(models)
        self.fallback = fallback

    def _bin(self, features):
        x = np.asarray(features, dtype=float)
        return np.searchsorted(self.edges, x[:, self.feature], side="right")

    def _dispatch(self, features, prices, method):
        p = np.asarray(prices, dtype=float).reshape(-1)
        b = self._bin(np.asarray(features, dtype=float).reshape(p.size, -1))
        out = np.empty(p.size)
        for k in np.unique(b):
            sel = b == k
            model = self.models[k] or self.fallback
            out[sel] = getattr(model, method)(None, p[sel])
        return out

    def raw_density(self, features, prices):
        return self._dispatch(features, prices, "raw_density")

    def cdf_at(self, features, prices):
        return self._dispatch(features, prices, "cdf_at")

    def to_dict(self):
        return {
            **self._header(),
            "feature": self.feature,
            "edges": self.edges.tolist(),
            "bins": [m.to_dict() if m is not None else None for m in self.models],
            "fallback": self.fallback.to_dict(),
        }


def _check_prices(data, minimum):
    p = np.asarray(data.prices, dtype=float)
    if p.size < minimum:
        raise DegenerateDataError(f"propensity fit needs at least {minimum} prices, got {p.size}")
    if np.ptp(p) == 0:
        raise DegenerateDataError("all logged prices are equal; the price density is degenerate")
    return p


def fit_propensity_kde(data, kernel="tophat", bandwidth_rule="silverman",
                       clip_floor=CLIP_FLOOR) -> KDEPropensity:
    """Marginal KDE of the logged prices.

    ``bandwidth_rule`` is ``"silverman"`` (``1.06 sd n^{-1/5}``) or a positive
    number used as a fixed bandwidth.
    """
    p = _check_prices(data, 10)
    if bandwidth_rule == "silverman":
        h = silverman_bandwidth(p)
    else:
        h = float(bandwidth_rule)
    return KDEPropensity(p, kernel=kernel, bandwidth=h, clip_floor=clip_floor)


def fit_propensity_gaussian(data, clip_floor=CLIP_FLOOR) -> GaussianPropensity:
    p = _check_prices(data, 2)
    return GaussianPropensity(float(p.mean()), float(p.std(ddof=1)), clip_floor)


def fit_propensity_binned(data, feature=0, bins=4, kernel="tophat", min_count=20,
                          clip_floor=CLIP_FLOOR) -> BinnedKDEPropensity:
    x = np.asarray(data.features, dtype=float)
    if not 0 <= feature < x.shape[1]:
        raise DomainError(f"feature column {feature} does not exist")
    fallback = fit_propensity_kde(data, kernel, clip_floor=clip_floor)
    col = x[:, feature]
    edges = np.unique(np.quantile(col, np.linspace(0, 1, bins + 1)[1:-1]))
    b = np.searchsorted(edges, col, side="right")
    models = []
    for k in range(edges.size + 1):
        p = data.prices[b == k]
        if p.size >= max(min_count, 10) and np.ptp(p) > 0:
            models.append(KDEPropensity(p, kernel=kernel, clip_floor=clip_floor))
        else:
            models.append(None)
    return BinnedKDEPropensity(feature, edges, models, fallback, clip_floor)


def propensity_from_dict(spec: dict) -> PropensityModel:
    if spec.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported propensity schema version {spec.get('schema_version')!r}")
    kind, c = spec.get("learner"), spec.get("clip_floor", CLIP_FLOOR)
    if kind == "gaussian":
        return GaussianPropensity(spec["mean"], spec["sd"], c)
    if kind == "kde":
        return KDEPropensity(spec["sample"], spec["kernel"], spec["bandwidth"], c,
                             spec["lower"], spec["upper"], spec.get("reflect", True))
    if kind == "known" and isinstance(spec.get("law"), dict):
        from ..core.policies import policy_from_dict

        return KnownPropensity(policy_from_dict(spec["law"]), clip_floor=c)
    raise SchemaError(f"propensity learner {kind!r} cannot be rebuilt from JSON")


@dataclass(frozen=True)
class KDELearner:
    kernel: str = "tophat"
    bandwidth: object = "silverman"
    clip_floor: float = CLIP_FLOOR
    name = "kde"

    def fit(self, data):
        return fit_propensity_kde(data, self.kernel, self.bandwidth, self.clip_floor)


@dataclass(frozen=True)
class GaussianLearner:
    clip_floor: float = CLIP_FLOOR
    name = "gaussian"

    def fit(self, data):
        return fit_propensity_gaussian(data, self.clip_floor)


@dataclass(frozen=True)
class BinnedKDELearner:
    feature: int = 0
    bins: int = 4
    kernel: str = "tophat"
    clip_floor: float = CLIP_FLOOR
    name = "binned_kde"

    def fit(self, data):
        return fit_propensity_binned(data, self.feature, self.bins, self.kernel,
                                     clip_floor=self.clip_floor)


@dataclass(frozen=True)
class FixedPropensity:
    model: PropensityModel
    name = "fixed"

    def fit(self, data):
        return self.model
