"""Consumer-surplus estimators for target and logging pricing policies.

Every estimator returns a :class:`SurplusEstimate` whose ``samples`` hold the
per-observation pieces of the efficient influence function: the plug-in
surplus ``h_i``, the cumulative weight ``omega_i``, the demand residual
``eps_i`` and the uncentred score ``psi_i``.

Modes
-----
``target``
    Surplus of a supplied pricing policy.
``behavior``
    Surplus of the logging policy that produced the data; pass
    :data:`BEHAVIOR` as the policy.
``delta``
    Target minus behavior, built from shared nuisance fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core.data import InequalityParams, ObservationSet
from .core.policies import PricingPolicy
from .core.quadrature import (
    PriceGrid,
    clamp_unit,
    integrate_cells,
    policy_surplus_integrals,
    tail_integrals,
)
from .errors import DegenerateDataError, DomainError, InvariantViolation
from .nuisance.folds import FoldAssignment, make_folds
from .nuisance.propensity import CLIP_FLOOR

DEFAULT_FOLDS = 2


class BehaviorPolicy:
    """Marker for the logging policy, whose law is only known through data."""

    kind = "behavior"

    def __repr__(self):
        return "BEHAVIOR"

    def to_dict(self):
        return {"type": self.kind}


BEHAVIOR = BehaviorPolicy()


def fsum_mean(values) -> float:
    """Exactly rounded mean, independent of the order of ``values``."""
    v = np.asarray(values, dtype=float).reshape(-1)
    return math.fsum(v.tolist()) / v.size


@dataclass(frozen=True)
class EifSamples:
    """Per-observation influence-function components.

    ``weight``, ``residual`` and ``psi`` are ``None`` when the estimator was
    run without the companion nuisance needed to form them.
    """

    plug_in: np.ndarray
    weight: np.ndarray | None = None
    residual: np.ndarray | None = None
    psi: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.plug_in.size

    def check(self, clip_floor: float = CLIP_FLOOR) -> None:
        for name in ("plug_in", "weight", "residual", "psi"):
            arr = getattr(self, name)
            if arr is not None and not np.all(np.isfinite(arr)):
                raise InvariantViolation(f"non-finite {name} in influence-function samples")
        if self.weight is not None:
            if np.any(self.weight < 0) or np.any(self.weight > (1 + 1e-12) / clip_floor):
                raise InvariantViolation("cumulative weight outside [0, 1/c]")
        if self.residual is not None and np.any(np.abs(self.residual) > 1 + 1e-12):
            raise InvariantViolation("demand residual outside [-1, 1]")


@dataclass(frozen=True)
class SurplusEstimate:
    """Point estimate with its influence-function variance.

    ``variance`` is the empirical second moment of the centred influence
    function, so the standard error is ``sqrt(variance / n)``.
    """

    value: float
    variance: float | None
    n: int
    method: str
    mode: str
    r: float = 1.0
    K: int | None = None
    nuisances: dict = field(default_factory=dict)
    samples: EifSamples | None = field(default=None, repr=False, compare=False)
    generalized_mean: float | None = None
    seed: int | None = None
    policy: dict | None = None

    @property
    def stderr(self) -> float | None:
        if self.variance is None:
            return None
        return math.sqrt(self.variance / self.n)

    def ci(self, alpha: float = 0.05):
        from .inference import confidence_interval

        if self.variance is None:
            return None
        return confidence_interval(self.value, self.variance, self.n, alpha)

    def to_dict(self, alpha: float = 0.05) -> dict:
        ci = self.ci(alpha)
        return {
            "method": self.method,
            "mode": self.mode,
            "r": self.r,
            "value": self.value,
            "variance": self.variance,
            "stderr": self.stderr,
            "alpha": alpha,
            "ci_low": None if ci is None else ci.low,
            "ci_high": None if ci is None else ci.high,
            "generalized_mean": self.generalized_mean,
            "n": self.n,
            "K": self.K,
            "policy": self.policy,
            "nuisances": self.nuisances,
            "seed": self.seed,
        }


def describe(model) -> dict | None:
    """Compact JSON description of a fitted nuisance model for reports."""
    if model is None:
        return None
    d = model.to_dict()
    for bulky in ("trees", "sample", "table", "keys"):
        d.pop(bulky, None)
    return d


def _variance(psi, value) -> float | None:
    if psi is None:
        return None
    if psi.size < 2:
        return None
    dev = psi - value
    return math.fsum((dev * dev).tolist()) / psi.size


def _default_grid(data: ObservationSet, grid: PriceGrid | None) -> PriceGrid:
    return grid if grid is not None else PriceGrid.for_support(data.price_support)


def _policy_grid(policy, grid: PriceGrid) -> PriceGrid:
    if isinstance(policy, BehaviorPolicy):
        return grid
    if not isinstance(policy, PricingPolicy):
        raise DomainError(f"expected a pricing policy or BEHAVIOR, got {type(policy).__name__}")
    lo, hi = policy.support()
    tol = 1e-9 * max(1.0, abs(grid.p_max))
    if lo < grid.p_min - tol or hi > grid.p_max + tol:
        raise DomainError(
            f"policy support [{lo}, {hi}] leaves the price window [{grid.p_min}, {grid.p_max}]"
        )
    return grid.refine(policy.breakpoints())


def _mode(policy) -> str:
    return "behavior" if isinstance(policy, BehaviorPolicy) else "target"


def _policy_dict(policy):
    try:
        return policy.to_dict()
    except Exception:  # policies holding unserialisable callables
        return {"type": getattr(policy, "kind", "policy")}


class NuisanceView:
    """Fitted nuisances evaluated on a block of observations.

    Demand values on the price grid are cached per grid, so several
    estimators over the same rows share one evaluation.
    """

    def __init__(self, rows: ObservationSet, demand=None, propensity=None):
        self.x = rows.features
        self.p = rows.prices
        self.y = rows.outcomes
        self.demand = demand
        self.propensity = propensity
        self._cells: dict[tuple, np.ndarray] = {}

    def mu_cells(self, grid: PriceGrid) -> np.ndarray:
        key = (grid.nodes.size, grid.nodes.tobytes())
        if key not in self._cells:
            self._cells[key] = clamp_unit(self.demand.predict_grid(self.x, grid.midpoints))
        return self._cells[key]

    def residual(self) -> np.ndarray:
        return self.y - clamp_unit(self.demand.predict(self.x, self.p))

    def density(self) -> np.ndarray:
        return self.propensity.density(self.x, self.p)

    def plug_in(self, policy, grid: PriceGrid) -> np.ndarray:
        if isinstance(policy, BehaviorPolicy):
            return tail_integrals(self.demand, self.x, self.p, grid, self.mu_cells(grid))
        g = _policy_grid(policy, grid)
        return policy_surplus_integrals(self.demand, policy, self.x, g, self.mu_cells(g))

    def weight(self, policy) -> np.ndarray:
        if isinstance(policy, BehaviorPolicy):
            num = self.propensity.cdf_at(self.x, self.p)
        else:
            num = policy.cdf_at(self.x, self.p)
        return num / self.density()

    def logging_surplus(self, grid: PriceGrid) -> np.ndarray:
        """``int F_D(z|X_i) mu(X_i, z) dz`` under the fitted logging law."""
        cdf = self.propensity.cdf_grid(self.x, grid.midpoints)
        return integrate_cells(cdf * self.mu_cells(grid), grid)


def _finish(method, mode, samples, value, variance, n, *, r=1.0, K=None, nuisances=None,
            seed=None, policy=None, clip_floor=CLIP_FLOOR, gmean=None):
    samples.check(clip_floor)
    if variance is not None and variance < 0:
        raise InvariantViolation("negative variance")
    return SurplusEstimate(value, variance, n, method, mode, r, K, nuisances or {}, samples,
                           gmean, seed, policy)


def _clip_floor(propensity) -> float:
    return getattr(propensity, "clip_floor", CLIP_FLOOR)


def estimate_dm(data: ObservationSet, demand, policy, grid: PriceGrid | None = None,
                *, propensity=None) -> SurplusEstimate:
    """Direct method: average the plug-in surplus over observed features.

    Target mode averages ``int F^pi(z|X_i) mu(X_i, z) dz``; behavior mode
    averages ``int_{P_i} mu(X_i, z) dz``. A ``propensity`` model is only used
    to form the influence function for the variance.
    """
    grid = _default_grid(data, grid)
    view = NuisanceView(data, demand, propensity)
    h = view.plug_in(policy, grid)
    value = fsum_mean(h)
    if propensity is None:
        samples = EifSamples(h)
    else:
        w, e = view.weight(policy), view.residual()
        samples = EifSamples(h, w, e, h + w * e)
    return _finish("DM", _mode(policy), samples, value, _variance(samples.psi, value), data.n,
                   nuisances={"demand": describe(demand), "propensity": describe(propensity)},
                   policy=_policy_dict(policy), clip_floor=_clip_floor(propensity))


def estimate_cpw(data: ObservationSet, propensity, policy, grid: PriceGrid | None = None,
                 *, demand=None) -> SurplusEstimate:
    """Cumulative propensity weighting: average of ``F(P_i|X_i) / pi_D(P_i|X_i) * Y_i``.

    Behavior mode uses the fitted logging CDF in the numerator. A ``demand``
    model is only used to form the influence function for the variance.
    """
    grid = _default_grid(data, grid)
    view = NuisanceView(data, demand, propensity)
    w = view.weight(policy)
    value = fsum_mean(w * data.outcomes)
    if demand is None:
        samples = EifSamples(np.zeros(data.n), w)
        variance = None
    else:
        h, e = view.plug_in(policy, grid), view.residual()
        samples = EifSamples(h, w, e, h + w * e)
        variance = _variance(samples.psi, value)
    return _finish("CPW", _mode(policy), samples, value, variance, data.n,
                   nuisances={"demand": describe(demand), "propensity": describe(propensity)},
                   policy=_policy_dict(policy), clip_floor=_clip_floor(propensity))


@dataclass(frozen=True)
class CrossFit:
    """Nuisance models fit on each fold complement."""

    folds: FoldAssignment
    demand_models: tuple
    propensity_models: tuple

    def views(self, data: ObservationSet):
        for k in range(self.folds.K):
            _, test = self.folds.split(k)
            yield test, NuisanceView(data.subset(test), self.demand_models[k],
                                     self.propensity_models[k])

    def describe(self) -> dict:
        return {
            "demand": describe(self.demand_models[0]),
            "propensity": describe(self.propensity_models[0]),
            "folds": self.folds.K,
        }


def cross_fit(data: ObservationSet, demand_learner, propensity_learner,
              folds: FoldAssignment | None = None) -> CrossFit:
    """Fit both learners on every fold complement."""
    if folds is None:
        folds = make_folds(data.n, DEFAULT_FOLDS, 0)
    if folds.n != data.n:
        raise DomainError(f"fold assignment covers {folds.n} rows, data has {data.n}")
    dms, pms = [], []
    for k in range(folds.K):
        train, _ = folds.split(k)
        if train.size == 0:
            raise DegenerateDataError(f"fold {k}: empty training complement")
        rows = data.subset(train)
        try:
            dms.append(demand_learner.fit(rows))
            pms.append(propensity_learner.fit(rows))
        except DegenerateDataError as exc:
            raise DegenerateDataError(f"fold {k}: {exc}") from exc
    return CrossFit(folds, tuple(dms), tuple(pms))


def _cross_scores(data, crossfit, grid, score):
    n = data.n
    parts = None
    for test, view in crossfit.views(data):
        out = score(view, grid)
        if parts is None:
            parts = [np.empty(n) for _ in out]
        for arr, piece in zip(parts, out):
            arr[test] = piece
    return parts


def _ensure_crossfit(data, demand_learner, propensity_learner, folds, crossfit):
    if crossfit is None:
        crossfit = cross_fit(data, demand_learner, propensity_learner, folds)
    elif crossfit.folds.n != data.n:
        raise DomainError("cross-fit was built for a different sample")
    return crossfit


def estimate_acpw(data: ObservationSet, demand_learner, propensity_learner, policy,
                  folds: FoldAssignment | None = None, grid: PriceGrid | None = None,
                  *, crossfit: CrossFit | None = None) -> SurplusEstimate:
    """Augmented CPW with K-fold cross-fitting.

    For observation ``i`` in fold ``k`` both nuisances come from fits on the
    other folds, and the score is ``h_i + omega_i * (Y_i - mu_i)``. Pass a
    precomputed ``crossfit`` to share fits across estimators; the learners
    are then ignored.
    """
    grid = _default_grid(data, grid)
    crossfit = _ensure_crossfit(data, demand_learner, propensity_learner, folds, crossfit)

    def score(view, g):
        h = view.plug_in(policy, g)
        return h, view.weight(policy), view.residual()

    h, w, e = _cross_scores(data, crossfit, grid, score)
    psi = h + w * e
    value = fsum_mean(psi)
    return _finish("ACPW", _mode(policy), EifSamples(h, w, e, psi), value,
                   _variance(psi, value), data.n, K=crossfit.folds.K,
                   nuisances=crossfit.describe(), seed=crossfit.folds.seed,
                   policy=_policy_dict(policy),
                   clip_floor=_clip_floor(crossfit.propensity_models[0]))


def _power(h, r, eps_h):
    """``h**r`` with the floor applied only where the power would blow up."""
    if r > 0:
        return np.power(np.maximum(h, 0.0), r)
    return np.power(np.maximum(h, eps_h), r)


def _ia_scores(view, policy, grid, params):
    r, eps_h = params.r, params.eps_h
    w, e = view.weight(policy), view.residual()
    if isinstance(policy, BehaviorPolicy):
        g = view.plug_in(policy, grid)
        big_h = view.logging_surplus(grid)
        lead = np.power(np.maximum(big_h, eps_h), r - 1.0)
        psi = r * (w * e + g) * lead + (1.0 - r) * _power(big_h, r, eps_h)
        return big_h, w, e, psi
    h = view.plug_in(policy, grid)
    lead = np.power(np.maximum(h, eps_h), r - 1.0)
    psi = r * w * e * lead + _power(h, r, eps_h)
    return h, w, e, psi


def _generalized_mean(value, r):
    return value ** (1.0 / r) if value > 0 else None


def estimate_ia(data: ObservationSet, demand_learner, propensity_learner, policy,
                folds: FoldAssignment | None = None,
                params: InequalityParams = InequalityParams(0.5),
                grid: PriceGrid | None = None, mode: str | None = None,
                *, crossfit: CrossFit | None = None) -> SurplusEstimate:
    """Cross-fitted estimator of ``E[S(pi|X)^r]`` (inequality-aware surplus).

    Target score: ``r * omega * eps * h^(r-1) + h^r`` with
    ``h = int F^pi mu``. Behavior score:
    ``r * (omega_D * eps + g) * H^(r-1) + (1 - r) * H^r`` with
    ``g = int_P mu`` and ``H = int F_D mu`` under the fitted logging law.
    ``h`` and ``H`` are floored at ``params.eps_h`` before the ``r - 1``
    power. ``mode="delta"`` returns target minus behavior from one cross-fit.
    """
    grid = _default_grid(data, grid)
    crossfit = _ensure_crossfit(data, demand_learner, propensity_learner, folds, crossfit)
    if mode == "delta":
        if isinstance(policy, BehaviorPolicy):
            raise DomainError("delta mode needs a target policy")
        t = estimate_ia(data, None, None, policy, params=params, grid=grid, crossfit=crossfit)
        b = estimate_ia(data, None, None, BEHAVIOR, params=params, grid=grid, crossfit=crossfit)
        return estimate_delta(t, b)
    expected = _mode(policy)
    if mode is not None and mode != expected:
        raise DomainError(f"mode {mode!r} does not match the supplied policy ({expected})")
    h, w, e, psi = _cross_scores(data, crossfit, grid,
                                 lambda view, g: _ia_scores(view, policy, g, params))
    value = fsum_mean(psi)
    return _finish("IA-ACPW", expected, EifSamples(h, w, e, psi), value, _variance(psi, value),
                   data.n, r=params.r, K=crossfit.folds.K, nuisances=crossfit.describe(),
                   seed=crossfit.folds.seed, policy=_policy_dict(policy),
                   clip_floor=_clip_floor(crossfit.propensity_models[0]),
                   gmean=_generalized_mean(value, params.r))


def estimate_ia_dm(data: ObservationSet, demand, propensity, policy,
                   params: InequalityParams = InequalityParams(0.5),
                   grid: PriceGrid | None = None) -> SurplusEstimate:
    """Plug-in estimate of ``E[S(pi|X)^r]``: the average of ``h_i^r``.

    Behavior mode needs ``propensity`` for the logging law inside ``H_i``;
    in target mode it is only used for the variance.
    """
    grid = _default_grid(data, grid)
    view = NuisanceView(data, demand, propensity)
    if isinstance(policy, BehaviorPolicy):
        if propensity is None:
            raise DomainError("behavior-mode inequality-aware DM needs a propensity model")
        inner = view.logging_surplus(grid)
    else:
        inner = view.plug_in(policy, grid)
    value = fsum_mean(_power(inner, params.r, params.eps_h))
    if propensity is None:
        samples = EifSamples(inner)
    else:
        samples = EifSamples(*_ia_scores(view, policy, grid, params))
    return _finish("IA-DM", _mode(policy), samples, value, _variance(samples.psi, value),
                   data.n, r=params.r,
                   nuisances={"demand": describe(demand), "propensity": describe(propensity)},
                   policy=_policy_dict(policy), clip_floor=_clip_floor(propensity),
                   gmean=_generalized_mean(value, params.r))


def estimate_delta(target: SurplusEstimate, behavior: SurplusEstimate) -> SurplusEstimate:
    """Target minus behavior surplus with influence function ``psi^pi - psi^D``."""
    if target.n != behavior.n:
        raise DomainError(f"sample sizes differ: {target.n} vs {behavior.n}")
    if target.method != behavior.method or target.r != behavior.r:
        raise DomainError("delta needs two estimates of the same method and r")
    if target.mode != "target" or behavior.mode != "behavior":
        raise DomainError("delta takes a target-mode and a behavior-mode estimate")
    value = target.value - behavior.value
    ts, bs = target.samples, behavior.samples
    samples = None
    variance = None
    if ts is not None and bs is not None:
        psi = None if ts.psi is None or bs.psi is None else ts.psi - bs.psi
        w = None if ts.weight is None or bs.weight is None else ts.weight - bs.weight
        samples = EifSamples(ts.plug_in - bs.plug_in, w, ts.residual, psi)
        variance = _variance(psi, value)
    gm = None
    if target.generalized_mean is not None and behavior.generalized_mean is not None:
        gm = target.generalized_mean - behavior.generalized_mean
    return SurplusEstimate(value, variance, target.n, target.method, "delta", target.r,
                           target.K, target.nuisances, samples, gm, target.seed, target.policy)
