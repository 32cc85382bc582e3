"""Influence-function variances, normal confidence intervals and coverage runs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .errors import DegenerateDataError, DomainError

_STD_NORMAL = NormalDist()


def normal_quantile(q: float) -> float:
    """Standard normal quantile ``Phi^{-1}(q)`` for ``q`` in (0, 1)."""
    if not 0 < q < 1:
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")
    return _STD_NORMAL.inv_cdf(q)


@dataclass(frozen=True)
class ConfidenceInterval:
    alpha: float
    low: float
    high: float
    z: float

    @property
    def width(self) -> float:
        return self.high - self.low

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


def eif_variance(samples, point) -> float:
    """Empirical second moment of the centred influence function.

    ``point`` is a :class:`SurplusEstimate` or a plain number.
    """
    psi = getattr(samples, "psi", samples)
    if psi is None:
        raise DomainError("influence-function scores are unavailable for these samples")
    psi = np.asarray(psi, dtype=float).reshape(-1)
    if psi.size < 2:
        raise DegenerateDataError("variance needs at least two samples")
    value = float(getattr(point, "value", point))
    dev = psi - value
    return math.fsum((dev * dev).tolist()) / psi.size


def confidence_interval(point, variance: float, n: int, alpha: float = 0.05) -> ConfidenceInterval:
    """``point +/- z_{1 - alpha/2} * sqrt(variance / n)``."""
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if variance is None or not variance >= 0:
        raise DomainError(f"variance must be nonnegative, got {variance}")
    if n < 1:
        raise DomainError("n must be positive")
    value = float(getattr(point, "value", point))
    z = normal_quantile(1.0 - alpha / 2.0)
    half = z * math.sqrt(variance / n)
    return ConfidenceInterval(alpha, value - half, value + half, z)


@dataclass(frozen=True)
class CoverageResult:
    scenario: str
    estimator: str
    n: int
    reps: int
    alpha: float
    coverage: float
    mean_ci_width: float


def coverage_experiment(scenario, n: int, reps: int, alpha: float = 0.10, rng_seed: int = 0,
                        estimators=None, modes=("target",), variance_scale: float = 1.0,
                        n_jobs: int = 1) -> dict[str, CoverageResult]:
    """Fraction of replications whose confidence interval holds the oracle truth.

    Returns one :class:`CoverageResult` per estimator (keyed
    ``"<estimator>/<mode>"``). ``variance_scale`` multiplies every variance
    before the interval is formed, which is useful for probing degenerate
    intervals.
    """
    from .simbench import run_study

    report = run_study(scenario, estimators, [n], reps, alpha, rng_seed, modes=modes,
                       variance_scale=variance_scale, n_jobs=n_jobs)
    out = {}
    for row in report.summary():
        key = f"{row['estimator']}/{row['mode']}"
        out[key] = CoverageResult(report.scenario, row["estimator"], n, reps, alpha,
                                  row["coverage"], row["mean_ci_width"])
    return out


def write_coverage_csv(path, results) -> None:
    cols = ["scenario", "estimator", "n", "reps", "alpha", "coverage", "mean_ci_width"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in results:
            w.writerow([r.scenario, r.estimator, r.n, r.reps, repr(r.alpha), repr(r.coverage),
                        repr(r.mean_ci_width)])
