"""Demand models ``mu(x, p) = P(V > p | X = x)`` and their learners.

All models expose ``predict(X, p)`` for paired rows and ``predict_grid(X, z)``
for every row against a common price vector. Predictions are raw; callers
clamp to ``[0, 1]`` where a probability is required.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateDataError, DomainError, SchemaError

SCHEMA_VERSION = 1


class DemandModel(ABC):
    learner: str = "demand"

    @abstractmethod
    def predict(self, features, prices) -> np.ndarray:
        """``mu(X_i, P_i)`` for paired rows."""

    def predict_grid(self, features, prices) -> np.ndarray:
        """``mu(X_i, z_k)`` as an ``(n, m)`` matrix."""
        x = np.asarray(features, dtype=float)
        z = np.asarray(prices, dtype=float).reshape(-1)
        n, m = x.shape[0], z.size
        out = self.predict(np.repeat(x, m, axis=0), np.tile(z, n))
        return out.reshape(n, m)

    @abstractmethod
    def to_dict(self) -> dict:
        """Versioned JSON-ready description."""

    def _header(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "learner": self.learner}


def _design(features, prices) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    p = np.asarray(prices, dtype=float).reshape(-1, 1)
    return np.hstack([x.reshape(p.shape[0], -1), p, np.ones_like(p)])


class LinearDemand(DemandModel):
    """``mu(x, p) = b_x . x + b_p p + b_0`` with coefficients on ``[x, p, 1]``."""

    learner = "linear"

    def __init__(self, coef, clipped_fit: bool = True):
        self.coef = np.asarray(coef, dtype=float).reshape(-1)
        self.clipped_fit = bool(clipped_fit)

    def predict(self, features, prices):
        return _design(features, prices) @ self.coef

    def predict_grid(self, features, prices):
        x = np.asarray(features, dtype=float)
        z = np.asarray(prices, dtype=float).reshape(-1)
        base = x.reshape(x.shape[0], -1) @ self.coef[:-2] + self.coef[-1]
        return base[:, None] + self.coef[-2] * z[None, :]

    def to_dict(self):
        return {**self._header(), "coef": self.coef.tolist(), "clipped_fit": self.clipped_fit}


def _clipped_least_squares(z, y, beta, max_iter=200):
    """Minimise ``sum (y - clip(z beta, 0, 1))^2`` by damped Gauss-Newton.

    Only rows whose linear index lies strictly inside (0, 1) carry gradient;
    each step is a least-squares solve on those rows followed by step halving.
    """

    def loss(b):
        r = y - np.clip(z @ b, 0.0, 1.0)
        return r @ r

    cur = loss(beta)
    for _ in range(max_iter):
        eta = z @ beta
        active = (eta > 0.0) & (eta < 1.0)
        if active.sum() <= z.shape[1]:
            break
        r = y - np.clip(eta, 0.0, 1.0)
        step = np.linalg.lstsq(z[active], r[active], rcond=None)[0]
        t = 1.0
        while t > 1e-6:
            cand = beta + t * step
            new = loss(cand)
            if new < cur:
                break
            t *= 0.5
        else:
            break
        gain = cur - new
        beta, cur = cand, new
        if gain <= 1e-12 * max(cur, 1e-300):
            break
    return beta


def fit_demand_linear(data, clip: bool = True) -> LinearDemand:
    """Linear demand in ``[x, p, 1]`` fit by least squares.

    With ``clip=True`` (default) the loss compares outcomes with the clamped
    prediction ``clip(b . [x, p, 1], 0, 1)``. That model is exact whenever
    valuations are linear in features plus uniform noise, since demand is then
    a clamped linear function of price. The ordinary least-squares fit is the
    starting point and is returned unchanged when no prediction leaves the
    unit interval. ``clip=False`` gives the plain linear probability model.

    Raises
    ------
    DegenerateDataError
        If ``n <= d + 2`` or the design matrix is rank deficient.
    """
    z = _design(data.features, data.prices)
    n, k = z.shape
    if n <= k:
        raise DegenerateDataError(f"linear demand needs n > d + 2 = {k}, got n = {n}")
    if np.linalg.matrix_rank(z) < k:
        raise DegenerateDataError("singular design: columns of [x, p, 1] are collinear")
    y = np.asarray(data.outcomes, dtype=float)
    beta = np.linalg.lstsq(z, y, rcond=None)[0]
    if clip:
        beta = _clipped_least_squares(z, y, beta)
    return LinearDemand(beta, clipped_fit=clip)


class FunctionDemand(DemandModel):
    """Wraps a vectorised callable ``fn(X, p) -> mu`` (known or oracle demand)."""

    learner = "function"

    def __init__(self, fn, label: str = "function", grid_fn=None):
        self.fn = fn
        self.label = label
        self.grid_fn = grid_fn

    def predict(self, features, prices):
        p = np.asarray(prices, dtype=float).reshape(-1)
        x = np.asarray(features, dtype=float).reshape(p.size, -1)
        return np.asarray(self.fn(x, p), dtype=float).reshape(-1) * np.ones(p.size)

    def predict_grid(self, features, prices):
        if self.grid_fn is not None:
            return self.grid_fn(np.asarray(features, dtype=float), np.asarray(prices, dtype=float))
        return super().predict_grid(features, prices)

    def to_dict(self):
        return {**self._header(), "label": self.label}


class TableDemand(DemandModel):
    """Step demand tabulated on a price grid for finitely many feature rows.

    ``mu(x, z) = table[k, j]`` for ``x == keys[k]`` and ``prices[j] <= z <
    prices[j + 1]``; below ``prices[0]`` the first column applies.
    """

    learner = "table"

    def __init__(self, prices, keys, table):
        self.prices = np.asarray(prices, dtype=float).reshape(-1)
        self.keys = np.asarray(keys, dtype=float).reshape(len(keys), -1)
        self.table = np.asarray(table, dtype=float)
        if not np.all(np.diff(self.prices) > 0):
            raise DomainError("table prices must be strictly increasing")
        if self.table.shape != (self.keys.shape[0], self.prices.size):
            raise DomainError("table needs one row per key and one column per price")
        if not np.all(np.isfinite(self.table)):
            raise DomainError("table entries must be finite")
        if np.unique(self.keys, axis=0).shape[0] != self.keys.shape[0]:
            raise DomainError("table keys must be distinct")

    def _rows(self, features):
        x = np.asarray(features, dtype=float).reshape(-1, self.keys.shape[1])
        hit = np.all(x[:, None, :] == self.keys[None, :, :], axis=2)
        found = hit.any(axis=1)
        if not np.all(found):
            raise DomainError("feature row not covered by the demand table")
        return hit.argmax(axis=1)

    def _cols(self, prices):
        return np.clip(np.searchsorted(self.prices, prices, side="right") - 1, 0, None)

    def predict(self, features, prices):
        p = np.asarray(prices, dtype=float).reshape(-1)
        return self.table[self._rows(features), self._cols(p)]

    def predict_grid(self, features, prices):
        z = np.asarray(prices, dtype=float).reshape(-1)
        return self.table[self._rows(features)][:, self._cols(z)]

    def to_dict(self):
        return {
            **self._header(),
            "prices": self.prices.tolist(),
            "keys": self.keys.tolist(),
            "table": self.table.tolist(),
        }


# ---------------------------------------------------------------- boosting


@dataclass(frozen=True)
class _Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, z):
        node = np.zeros(z.shape[0], dtype=np.int64)
        rows = np.arange(z.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            go_left = z[rows, np.where(inner, f, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(inner, nxt, node)

    def leaves(self):
        """Yield ``(value, conditions)`` with ``(feature, threshold, is_left)`` steps."""
        stack = [(0, ())]
        while stack:
            node, path = stack.pop()
            f = self.feature[node]
            if f < 0:
                yield self.value[node], path
                continue
            t = self.threshold[node]
            stack.append((self.left[node], path + ((f, t, True),)))
            stack.append((self.right[node], path + ((f, t, False),)))

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}


class BoostedTreesDemand(DemandModel):
    """Additive regression trees on ``[x, p]``; price is the last column."""

    learner = "boosted_trees"

    def __init__(self, init: float, rate: float, trees, n_features: int, params=None):
        self.init = float(init)
        self.rate = float(rate)
        self.trees = list(trees)
        self.n_features = int(n_features)
        self.params = dict(params or {})
        self._compile()

    def _compile(self):
        price_col = self.n_features
        thr = [
            t.threshold[i]
            for t in self.trees
            for i in range(t.feature.size)
            if t.feature[i] == price_col
        ]
        self._cuts = np.unique(np.asarray(thr, dtype=float))
        leaves = []
        for t in self.trees:
            for value, path in t.leaves():
                lo, hi = -np.inf, np.inf
                conds = []
                for f, th, is_left in path:
                    if f == price_col:
                        if is_left:
                            hi = min(hi, th)
                        else:
                            lo = max(lo, th)
                    else:
                        conds.append((int(f), float(th), bool(is_left)))
                k_lo = 0 if lo == -np.inf else int(np.searchsorted(self._cuts, lo)) + 1
                k_hi = self._cuts.size if hi == np.inf else int(np.searchsorted(self._cuts, hi))
                if k_lo <= k_hi:
                    leaves.append((self.rate * value, tuple(conds), k_lo, k_hi))
        self._leaves = leaves

    def predict(self, features, prices):
        z = np.column_stack([np.asarray(features, dtype=float).reshape(len(prices), -1),
                             np.asarray(prices, dtype=float)])
        out = np.full(z.shape[0], self.init)
        for t in self.trees:
            out += self.rate * t.value[t.apply(z)]
        return out

    def predict_grid(self, features, prices):
        # For fixed x every tree is a step function of price with jumps at the
        # price thresholds, so accumulate leaf values as difference arrays over
        # the intervals between thresholds instead of evaluating n * m points.
        x = np.asarray(features, dtype=float).reshape(-1, self.n_features)
        z = np.asarray(prices, dtype=float).reshape(-1)
        n, k = x.shape[0], self._cuts.size
        diff = np.zeros((k + 2, n))
        cache = {}
        for value, conds, k_lo, k_hi in self._leaves:
            mask = None
            for f, th, is_left in conds:
                key = (f, th)
                if key not in cache:
                    cache[key] = x[:, f] <= th
                m = cache[key] if is_left else ~cache[key]
                mask = m if mask is None else mask & m
            contrib = value if mask is None else value * mask
            diff[k_lo] += contrib
            diff[k_hi + 1] -= contrib
        levels = np.cumsum(diff[: k + 1], axis=0) + self.init
        return levels[np.searchsorted(self._cuts, z, side="left")].T

    def to_dict(self):
        return {
            **self._header(),
            "init": self.init,
            "rate": self.rate,
            "n_features": self.n_features,
            "params": self.params,
            "trees": [t.to_dict() for t in self.trees],
        }


def _bin_edges(col, max_bins):
    u = np.unique(col)
    if u.size <= 1:
        return np.empty(0)
    if u.size <= max_bins:
        return 0.5 * (u[1:] + u[:-1])
    q = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1])
    # snap cut points between neighbouring observed values
    idx = np.searchsorted(u, q, side="right")
    idx = np.unique(np.clip(idx, 1, u.size - 1))
    return 0.5 * (u[idx] + u[idx - 1])


def _grow(binned, edges, grad, idx, depth, max_depth, min_leaf, nodes):
    node_id = len(nodes["feature"])
    for key in nodes:
        nodes[key].append(0)
    nodes["feature"][node_id] = -1
    nodes["value"][node_id] = float(grad[idx].mean())
    leaves = [(node_id, idx)]
    if depth >= max_depth or idx.size < 2 * min_leaf:
        return leaves
    g = grad[idx]
    total, count = g.sum(), idx.size
    best = (1e-12 * max(1.0, abs(g @ g)), None, None)
    for j, cuts in enumerate(edges):
        if cuts.size == 0:
            continue
        b = binned[idx, j]
        sums = np.bincount(b, weights=g, minlength=cuts.size + 1)[:-1].cumsum()
        cnts = np.bincount(b, minlength=cuts.size + 1)[:-1].cumsum()
        ok = (cnts >= min_leaf) & (count - cnts >= min_leaf)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = sums**2 / cnts + (total - sums) ** 2 / (count - cnts) - total**2 / count
        gain = np.where(ok, gain, -np.inf)
        t = int(np.argmax(gain))
        if gain[t] > best[0]:
            best = (gain[t], j, t)
    _, j, t = best
    if j is None:
        return leaves
    go_left = binned[idx, j] <= t
    nodes["feature"][node_id] = j
    nodes["threshold"][node_id] = float(edges[j][t])
    nodes["left"][node_id] = len(nodes["feature"])
    left = _grow(binned, edges, grad, idx[go_left], depth + 1, max_depth, min_leaf, nodes)
    nodes["right"][node_id] = len(nodes["feature"])
    right = _grow(binned, edges, grad, idx[~go_left], depth + 1, max_depth, min_leaf, nodes)
    return left + right


def fit_demand_boosted(
    data,
    rounds: int = 100,
    depth: int = 2,
    rate: float = 0.1,
    rng_seed=None,
    min_leaf: int = 5,
    max_bins: int = 255,
    subsample: float = 1.0,
) -> BoostedTreesDemand:
    """Least-squares gradient boosting of depth-limited trees on ``(x, p) -> y``.

    Splits are searched over at most ``max_bins`` quantile cut points per
    column. ``rng_seed`` only matters when ``subsample < 1``.
    """
    if int(rounds) != rounds or rounds < 1:
        raise DomainError(f"rounds must be a positive integer, got {rounds}")
    if int(depth) != depth or depth < 1:
        raise DomainError(f"depth must be a positive integer, got {depth}")
    if not 0 < rate <= 1:
        raise DomainError(f"learning rate must lie in (0, 1], got {rate}")
    if not 0 < subsample <= 1:
        raise DomainError(f"subsample must lie in (0, 1], got {subsample}")
    z = np.column_stack([data.features, data.prices])
    y = np.asarray(data.outcomes, dtype=float)
    n = y.size
    edges = [_bin_edges(z[:, j], max_bins) for j in range(z.shape[1])]
    binned = np.column_stack(
        [np.searchsorted(e, z[:, j], side="left") for j, e in enumerate(edges)]
    ).astype(np.int64)
    rng = np.random.default_rng(rng_seed)
    init = float(y.mean())
    fit = np.full(n, init)
    trees = []
    for _ in range(int(rounds)):
        grad = y - fit
        if subsample < 1:
            idx = np.sort(rng.choice(n, size=max(1, int(subsample * n)), replace=False))
        else:
            idx = np.arange(n)
        nodes = {k: [] for k in ("feature", "threshold", "left", "right", "value")}
        _grow(binned, edges, grad, idx, 0, int(depth), int(min_leaf), nodes)
        tree = _Tree(
            np.asarray(nodes["feature"], dtype=np.int64),
            np.asarray(nodes["threshold"], dtype=float),
            np.asarray(nodes["left"], dtype=np.int64),
            np.asarray(nodes["right"], dtype=np.int64),
            np.asarray(nodes["value"], dtype=float),
        )
        fit += rate * tree.value[tree.apply(z)]
        trees.append(tree)
    params = {"rounds": int(rounds), "depth": int(depth), "rate": float(rate),
              "min_leaf": int(min_leaf), "max_bins": int(max_bins), "subsample": float(subsample)}
    return BoostedTreesDemand(init, rate, trees, data.d, params)


def demand_from_dict(spec: dict) -> DemandModel:
    """Rebuild a model serialised by ``to_dict``."""
    if spec.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported demand schema version {spec.get('schema_version')!r}")
    kind = spec.get("learner")
    if kind == "linear":
        return LinearDemand(spec["coef"], spec.get("clipped_fit", True))
    if kind == "table":
        return TableDemand(spec["prices"], spec["keys"], spec["table"])
    if kind == "boosted_trees":
        trees = [
            _Tree(*(np.asarray(t[k], dtype=float if k in ("threshold", "value") else np.int64)
                    for k in ("feature", "threshold", "left", "right", "value")))
            for t in spec["trees"]
        ]
        return BoostedTreesDemand(spec["init"], spec["rate"], trees, spec["n_features"],
                                  spec.get("params"))
    raise SchemaError(f"demand learner {kind!r} cannot be rebuilt from JSON")


# ---------------------------------------------------------------- learners


@dataclass(frozen=True)
class LinearLearner:
    clip: bool = True
    name = "linear"

    def fit(self, data) -> LinearDemand:
        return fit_demand_linear(data, clip=self.clip)


@dataclass(frozen=True)
class BoostedLearner:
    rounds: int = 100
    depth: int = 2
    rate: float = 0.1
    min_leaf: int = 5
    rng_seed: int | None = None
    name = "boosted_trees"

    def fit(self, data) -> BoostedTreesDemand:
        return fit_demand_boosted(data, self.rounds, self.depth, self.rate, self.rng_seed,
                                  min_leaf=self.min_leaf)


@dataclass(frozen=True)
class FixedDemand:
    """Learner that ignores the data and returns a given model."""

    model: DemandModel
    name = "fixed"

    def fit(self, data) -> DemandModel:
        return self.model
